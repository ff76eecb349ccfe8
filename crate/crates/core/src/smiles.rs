//! Restricted SMILES dialect for polymer repeat units.
//!
//! Supported: organic-subset atoms `B C N O P S F Cl Br I`, the anchor `*`,
//! bracket atoms with an optional hydrogen count and a `+`/`-` charge
//! (`[NH3+]`, `[O-]`, `[*]`), bond symbols `-` `=` `#`, branches, ring
//! closures `1`-`9` (and `%nn`), and `.` for disconnected fragments (which
//! are then rejected). Aromatic atoms, stereo markers and isotopes are not
//! part of the dialect; inputs must be kekulized.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("anchor error: {0}")]
    Anchor(String),
    #[error("connectivity error: {0}")]
    Connectivity(String),
}

fn syntax<T>(pos: usize, msg: impl Into<String>) -> Result<T, SmilesError> {
    Err(SmilesError::Syntax {
        pos,
        msg: msg.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
    /// Polymerization point.
    Star,
}

impl Element {
    /// The ten real elements, in feature order.
    pub const REAL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::Star => "*",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Some(match s {
            "B" => Element::B,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "P" => Element::P,
            "S" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            "*" => Element::Star,
            _ => return None,
        })
    }

    /// Index into the 11-slot element one-hot (`*` last).
    pub fn index(self) -> usize {
        match self {
            Element::Star => 10,
            e => Element::REAL.iter().position(|&r| r == e).unwrap(),
        }
    }

    /// Allowed valences in increasing order.
    fn valences(self) -> &'static [u32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::Star => &[1],
        }
    }

    /// Implicit hydrogens for an unbracketed atom with the given bond-order sum.
    pub fn implicit_hydrogens(self, bond_order_sum: u32) -> u8 {
        if self == Element::Star {
            return 0;
        }
        self.valences()
            .iter()
            .find(|&&v| v >= bond_order_sum)
            .map(|&v| (v - bond_order_sum) as u8)
            .unwrap_or(0)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
}

impl BondOrder {
    pub fn value(self) -> u32 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn from_value(v: u32) -> Option<BondOrder> {
        match v {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomNode {
    pub element: Element,
    pub charge: i8,
    pub hydrogens: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Parsed molecular graph before any anchor validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<AtomNode>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    pub fn neighbors(&self, atom: usize) -> Vec<(usize, BondOrder)> {
        let mut out: Vec<_> = self
            .bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .map(|b| (b.other(atom), b.order))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push(b.b);
            adj[b.b].push(b.a);
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.atoms.len()
    }
}

/// A validated repeat unit: connected, with exactly two degree-1 `*` anchors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepeatUnit {
    pub atoms: Vec<AtomNode>,
    pub bonds: Vec<Bond>,
    pub anchor_in: usize,
    pub anchor_out: usize,
    pub source_text: String,
}

impl RepeatUnit {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn count_element(&self, element: Element) -> usize {
        self.atoms.iter().filter(|a| a.element == element).count()
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    pub fn as_graph(&self) -> MolGraph {
        MolGraph {
            atoms: self.atoms.clone(),
            bonds: self.bonds.clone(),
        }
    }
}

impl TryFrom<MolGraph> for RepeatUnit {
    type Error = SmilesError;

    fn try_from(g: MolGraph) -> Result<Self, Self::Error> {
        validate(g, String::new())
    }
}

fn validate(g: MolGraph, source_text: String) -> Result<RepeatUnit, SmilesError> {
    let anchors: Vec<usize> = g
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| a.element == Element::Star)
        .map(|(i, _)| i)
        .collect();
    if anchors.len() != 2 {
        return Err(SmilesError::Anchor(format!(
            "expected exactly 2 `*` anchors, found {}",
            anchors.len()
        )));
    }
    for &a in &anchors {
        let d = g.degree(a);
        if d != 1 {
            return Err(SmilesError::Anchor(format!(
                "anchor at atom {a} has degree {d}, expected 1"
            )));
        }
    }
    if !g.is_connected() {
        return Err(SmilesError::Connectivity(
            "repeat unit has disconnected fragments".into(),
        ));
    }
    Ok(RepeatUnit {
        atoms: g.atoms,
        bonds: g.bonds,
        anchor_in: anchors[0],
        anchor_out: anchors[1],
        source_text,
    })
}

/// Parse a repeat unit and validate anchors and connectivity.
pub fn parse_repeat_unit(text: &str) -> Result<RepeatUnit, SmilesError> {
    let g = parse_molecule(text)?;
    validate(g, text.to_string())
}

/// Parse the line notation into a graph without checking anchors.
pub fn parse_molecule(text: &str) -> Result<MolGraph, SmilesError> {
    if text.is_empty() {
        return syntax(0, "empty input");
    }
    if !text.is_ascii() {
        return syntax(0, "input must be ASCII");
    }
    Parser::new(text.as_bytes()).run()
}

/// Element plus bracket state; `hydrogens: None` means "compute implicitly".
struct PendingAtom {
    element: Element,
    charge: i8,
    hydrogens: Option<u8>,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<Bond>,
    rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a [u8]) -> Self {
        Self {
            src,
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            rings: BTreeMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<(), SmilesError> {
        if a == b {
            return syntax(self.pos, "bond from an atom to itself");
        }
        let (a, b) = (a.min(b), a.max(b));
        if self.bonds.iter().any(|x| x.a == a && x.b == b) {
            return syntax(self.pos, format!("duplicate bond between atoms {a} and {b}"));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn run(mut self) -> Result<MolGraph, SmilesError> {
        let mut prev: Option<usize> = None;
        let mut pending_bond: Option<(BondOrder, usize)> = None;
        let mut branch_stack: Vec<usize> = Vec::new();
        let mut branch_open_pos: Vec<usize> = Vec::new();

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'-' | b'=' | b'#' => {
                    if pending_bond.is_some() {
                        return syntax(start, "two consecutive bond symbols");
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        _ => BondOrder::Triple,
                    };
                    pending_bond = Some((order, start));
                    self.pos += 1;
                }
                b'(' => {
                    let Some(p) = prev else {
                        return syntax(start, "branch before any atom");
                    };
                    if pending_bond.is_some() {
                        return syntax(start, "bond symbol before branch");
                    }
                    branch_stack.push(p);
                    branch_open_pos.push(start);
                    self.pos += 1;
                }
                b')' => {
                    let Some(p) = branch_stack.pop() else {
                        return syntax(start, "unbalanced ')'");
                    };
                    branch_open_pos.pop();
                    if pending_bond.is_some() {
                        return syntax(start, "bond symbol at end of branch");
                    }
                    if prev.is_some_and(|q| q == p) {
                        return syntax(start, "empty branch");
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'.' => {
                    if pending_bond.is_some() {
                        return syntax(start, "bond symbol before '.'");
                    }
                    if !branch_stack.is_empty() {
                        return syntax(start, "'.' inside a branch");
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'1'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return syntax(start, "ring digit before any atom");
                    };
                    let label = self.ring_label()?;
                    let bond = pending_bond.take().map(|(o, _)| o);
                    match self.rings.remove(&label) {
                        Some((other, open_bond, _)) => {
                            let order = match (open_bond, bond) {
                                (Some(x), Some(y)) if x != y => {
                                    return syntax(start, "conflicting ring-closure bond orders")
                                }
                                (Some(x), _) | (None, Some(x)) => x,
                                (None, None) => BondOrder::Single,
                            };
                            self.add_bond(other, p, order)?;
                        }
                        None => {
                            self.rings.insert(label, (p, bond, start));
                        }
                    }
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        let order = pending_bond.take().map_or(BondOrder::Single, |(o, _)| o);
                        self.add_bond(p, idx, order)?;
                    } else if let Some((_, at)) = pending_bond {
                        return syntax(at, "bond symbol without a preceding atom");
                    }
                    prev = Some(idx);
                }
            }
        }

        if let Some((_, at)) = pending_bond {
            return syntax(at, "dangling bond symbol");
        }
        if let Some(&at) = branch_open_pos.last() {
            return syntax(at, "unbalanced '('");
        }
        if let Some((label, (_, _, at))) = self.rings.iter().next() {
            return syntax(*at, format!("unclosed ring bond {label}"));
        }

        let mut bond_sum = vec![0u32; self.atoms.len()];
        for b in &self.bonds {
            bond_sum[b.a] += b.order.value();
            bond_sum[b.b] += b.order.value();
        }
        let atoms = self
            .atoms
            .iter()
            .zip(&bond_sum)
            .map(|(a, &s)| AtomNode {
                element: a.element,
                charge: a.charge,
                hydrogens: a
                    .hydrogens
                    .unwrap_or_else(|| a.element.implicit_hydrogens(s)),
            })
            .collect();
        Ok(MolGraph {
            atoms,
            bonds: self.bonds,
        })
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            let digits = self.src.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0'))
                }
                _ => syntax(start, "'%' must be followed by two digits"),
            }
        } else {
            let d = self.src[self.pos] - b'0';
            self.pos += 1;
            Ok(u32::from(d))
        }
    }

    fn atom(&mut self) -> Result<PendingAtom, SmilesError> {
        let start = self.pos;
        let c = self.src[self.pos];
        if c == b'[' {
            return self.bracket_atom();
        }
        if c == b'*' {
            self.pos += 1;
            return Ok(PendingAtom {
                element: Element::Star,
                charge: 0,
                hydrogens: Some(0),
            });
        }
        let two = self.src.get(self.pos..self.pos + 2);
        let element = match two {
            Some(b"Cl") => Some(Element::Cl),
            Some(b"Br") => Some(Element::Br),
            _ => None,
        };
        let element = match element {
            Some(e) => {
                self.pos += 2;
                e
            }
            None => {
                let sym = (c as char).to_string();
                match Element::from_symbol(&sym) {
                    Some(e) if e != Element::Star => {
                        self.pos += 1;
                        e
                    }
                    _ => return syntax(start, format!("unknown element '{}'", c as char)),
                }
            }
        };
        Ok(PendingAtom {
            element,
            charge: 0,
            hydrogens: None,
        })
    }

    fn bracket_atom(&mut self) -> Result<PendingAtom, SmilesError> {
        let start = self.pos;
        let Some(rel_end) = self.src[self.pos..].iter().position(|&b| b == b']') else {
            return syntax(start, "unterminated bracket atom");
        };
        let body = &self.src[self.pos + 1..self.pos + rel_end];
        self.pos += rel_end + 1;

        let mut i = 0;
        let sym_len = if body.len() >= 2 && body[0].is_ascii_uppercase() && body[1].is_ascii_lowercase()
        {
            2
        } else {
            1
        };
        if body.is_empty() {
            return syntax(start, "empty bracket atom");
        }
        let sym = std::str::from_utf8(&body[..sym_len.min(body.len())]).unwrap_or("");
        let Some(element) = Element::from_symbol(sym) else {
            return syntax(start, format!("unknown element '{sym}'"));
        };
        i += sym.len();

        let mut hydrogens = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            hydrogens = 1;
            if let Some(d) = body.get(i).filter(|d| d.is_ascii_digit()) {
                hydrogens = d - b'0';
                i += 1;
            }
        }
        let mut charge = 0i8;
        while let Some(&s) = body.get(i) {
            match s {
                b'+' => charge += 1,
                b'-' => charge -= 1,
                _ => break,
            }
            i += 1;
        }
        if let Some(d) = body.get(i).filter(|d| d.is_ascii_digit()) {
            if charge == 0 {
                return syntax(start, "charge magnitude without sign");
            }
            charge = charge.signum() * (d - b'0') as i8;
            i += 1;
        }
        if i != body.len() {
            return syntax(start, "unsupported bracket-atom content");
        }
        if element == Element::Star && (hydrogens != 0 || charge != 0) {
            return syntax(start, "anchor cannot carry hydrogens or charge");
        }
        Ok(PendingAtom {
            element,
            charge,
            hydrogens: Some(hydrogens),
        })
    }
}

/// Deterministic re-serialization. DFS from `anchor_in`, neighbors visited in
/// index order, ring closures numbered with the smallest free label.
pub fn canonical_text(ru: &RepeatUnit) -> String {
    let n = ru.atoms.len();
    let mut adj: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut bond_sum = vec![0u32; n];
    for b in &ru.bonds {
        adj[b.a].push((b.b, b.order));
        adj[b.b].push((b.a, b.order));
        bond_sum[b.a] += b.order.value();
        bond_sum[b.b] += b.order.value();
    }
    for list in &mut adj {
        list.sort_unstable();
    }

    // First pass: DFS tree, collect ring-closure (back) edges.
    let mut order = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut visit = Vec::with_capacity(n);
    let mut ring_edges: Vec<(usize, usize)> = Vec::new();
    fn dfs(
        u: usize,
        adj: &[Vec<(usize, BondOrder)>],
        order: &mut [usize],
        parent: &mut [usize],
        visit: &mut Vec<usize>,
        ring_edges: &mut Vec<(usize, usize)>,
    ) {
        order[u] = visit.len();
        visit.push(u);
        for &(v, _) in &adj[u] {
            if v == parent[u] {
                continue;
            }
            if order[v] == usize::MAX {
                parent[v] = u;
                dfs(v, adj, order, parent, visit, ring_edges);
            } else if order[v] < order[u] {
                ring_edges.push((v, u));
            }
        }
    }
    dfs(ru.anchor_in, &adj, &mut order, &mut parent, &mut visit, &mut ring_edges);

    // Ring openings at the earlier atom, closings at the later one.
    let mut opens: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); n];
    ring_edges.sort_by_key(|&(a, b)| (order[a], order[b]));
    for &(a, b) in &ring_edges {
        let ord = adj[a].iter().find(|x| x.0 == b).unwrap().1;
        opens[a].push((b, ord));
        closes[b].push(a);
    }

    let mut out = String::new();
    let mut labels: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let mut in_use: Vec<u32> = Vec::new();

    fn label_text(l: u32) -> String {
        if l < 10 {
            l.to_string()
        } else {
            format!("%{l:02}")
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn write(
        u: usize,
        ru: &RepeatUnit,
        adj: &[Vec<(usize, BondOrder)>],
        bond_sum: &[u32],
        parent: &[usize],
        opens: &[Vec<(usize, BondOrder)>],
        closes: &[Vec<usize>],
        labels: &mut BTreeMap<(usize, usize), u32>,
        in_use: &mut Vec<u32>,
        out: &mut String,
    ) {
        let atom = ru.atoms[u];
        let implicit = atom.element.implicit_hydrogens(bond_sum[u]);
        if atom.element == Element::Star || (atom.charge == 0 && atom.hydrogens == implicit) {
            out.push_str(atom.element.symbol());
        } else {
            out.push('[');
            out.push_str(atom.element.symbol());
            match atom.hydrogens {
                0 => {}
                1 => out.push('H'),
                h => {
                    out.push('H');
                    out.push_str(&h.to_string());
                }
            }
            match atom.charge {
                0 => {}
                1 => out.push('+'),
                -1 => out.push('-'),
                c if c > 0 => out.push_str(&format!("+{c}")),
                c => out.push_str(&format!("-{}", -c)),
            }
            out.push(']');
        }
        for &other in &closes[u] {
            let l = labels.remove(&(other, u)).expect("ring label opened");
            in_use.retain(|&x| x != l);
            out.push_str(&label_text(l));
        }
        for &(other, ord) in &opens[u] {
            let l = (1..).find(|l| !in_use.contains(l)).unwrap();
            in_use.push(l);
            labels.insert((u, other), l);
            out.push_str(ord.symbol());
            out.push_str(&label_text(l));
        }
        let children: Vec<(usize, BondOrder)> = adj[u]
            .iter()
            .copied()
            .filter(|&(v, _)| parent[v] == u)
            .collect();
        for (i, &(v, ord)) in children.iter().enumerate() {
            let last = i + 1 == children.len();
            if !last {
                out.push('(');
            }
            out.push_str(ord.symbol());
            write(v, ru, adj, bond_sum, parent, opens, closes, labels, in_use, out);
            if !last {
                out.push(')');
            }
        }
    }

    write(
        ru.anchor_in,
        ru,
        &adj,
        &bond_sum,
        &parent,
        &opens,
        &closes,
        &mut labels,
        &mut in_use,
        &mut out,
    );
    out
}

/// Parse a batch file: one unit per line, `#` comments and blank lines skipped.
/// Returns (1-based line number, result) pairs.
pub fn parse_batch(text: &str) -> Vec<(usize, Result<RepeatUnit, SmilesError>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| (i + 1, parse_repeat_unit(l.trim())))
        .collect()
}
