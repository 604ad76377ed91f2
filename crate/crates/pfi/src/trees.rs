//! Decorated trees for oscillatory iterated integrals.
//!
//! A [`DecoratedTree`] is a rooted non-planar tree whose edges carry an
//! operator label plus a conjugation bit and whose nodes carry a frequency
//! (a signed combination of formal symbols) and a time-monomial exponent.
//! The implicit root above the top node is undecorated. Node frequencies obey
//! Kirchhoff's law: the signed frequency of every inner node equals the
//! signed sum of its children's frequencies, where an edge with conjugation
//! bit 1 flips the sign of the frequency above it.
//!
//! Trees are kept in a canonical child order so that structural equality,
//! hashing and symmetry-factor grouping are all decidable by byte comparison
//! of [`DecoratedTree::canonical_bytes`].

use crate::sympoly::{CRat, SymPoly, SymbolId, ROOT_SYMBOL};
use num_complex::Complex64;
use num_rational::Rational64;
use num_traits::Zero;
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;

// ---------------------------------------------------------------------------
// Frequencies
// ---------------------------------------------------------------------------

/// An integer linear combination of base frequency symbols.
///
/// Leaf decorations always have all coefficients in {-1, 0, +1}; derived
/// inner-node decorations may exceed that range only transiently during
/// constraint elimination.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Debug)]
pub struct LinearFrequency(BTreeMap<SymbolId, i32>);

impl LinearFrequency {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn symbol(s: SymbolId) -> Self {
        let mut m = BTreeMap::new();
        m.insert(s, 1);
        Self(m)
    }

    pub fn from_terms(terms: &[(SymbolId, i32)]) -> Self {
        let mut f = Self::zero();
        for &(s, c) in terms {
            f.add_i(s, c);
        }
        f
    }

    fn add_i(&mut self, s: SymbolId, c: i32) {
        if c == 0 {
            return;
        }
        let e = self.0.entry(s).or_insert(0);
        *e += c;
        if *e == 0 {
            self.0.remove(&s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeff(&self, s: SymbolId) -> i32 {
        *self.0.get(&s).unwrap_or(&0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (SymbolId, i32)> + '_ {
        self.0.iter().map(|(&s, &c)| (s, c))
    }

    pub fn symbols(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.0.keys().copied()
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|(&s, &c)| (s, -c)).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (s, c) in other.terms() {
            out.add_i(s, c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scaled(&self, k: i32) -> Self {
        if k == 0 {
            return Self::zero();
        }
        Self(self.0.iter().map(|(&s, &c)| (s, c * k)).collect())
    }

    /// All coefficients in {-1, 0, +1}.
    pub fn unit_coefficients(&self) -> bool {
        self.0.values().all(|c| c.abs() <= 1)
    }

    /// Replace `sym` by `repl` wherever it occurs.
    pub fn substitute(&self, sym: SymbolId, repl: &Self) -> Self {
        let c = self.coeff(sym);
        if c == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.0.remove(&sym);
        out.add(&repl.scaled(c))
    }

    /// Evaluate on a d-dimensional integer assignment of the symbols.
    pub fn eval(&self, assign: &dyn Fn(SymbolId) -> Vec<i64>, d: usize) -> Vec<i64> {
        let mut v = vec![0i64; d];
        for (s, c) in self.terms() {
            let a = assign(s);
            for (vi, ai) in v.iter_mut().zip(a.iter()) {
                *vi += (c as i64) * ai;
            }
        }
        v
    }

    pub fn to_sympoly(&self) -> SymPoly {
        let mut p = SymPoly::zero();
        for (s, c) in self.terms() {
            p = p.add(&SymPoly::symbol(s).scale(Rational64::from_integer(c as i64)));
        }
        p
    }

    /// Sign of the lexicographically leading coefficient; 0 for the zero map.
    pub fn leading_sign(&self) -> i32 {
        self.0.values().next().map_or(0, |c| c.signum())
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u32).to_be_bytes());
        for (s, c) in self.terms() {
            out.extend_from_slice(&s.to_be_bytes());
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
}

impl fmt::Display for LinearFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (s, c) in self.terms() {
            let name = if s == ROOT_SYMBOL {
                "k".to_string()
            } else {
                format!("k{}", s)
            };
            match (first, c) {
                (true, 1) => write!(f, "{}", name)?,
                (true, -1) => write!(f, "-{}", name)?,
                (true, c) => write!(f, "{}{}", c, name)?,
                (false, 1) => write!(f, "+{}", name)?,
                (false, -1) => write!(f, "-{}", name)?,
                (false, c) if c > 0 => write!(f, "+{}{}", c, name)?,
                (false, c) => write!(f, "{}{}", c, name)?,
            }
            first = false;
        }
        Ok(())
    }
}

impl Serialize for LinearFrequency {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (s, c) in self.terms() {
            map.serialize_entry(&s.to_string(), &c)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for LinearFrequency {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: BTreeMap<String, i32> = BTreeMap::deserialize(deserializer)?;
        let mut f = LinearFrequency::zero();
        for (s, c) in raw {
            let id: SymbolId = s.parse().map_err(serde::de::Error::custom)?;
            f.add_i(id, c);
        }
        Ok(f)
    }
}

// ---------------------------------------------------------------------------
// Edges and trees
// ---------------------------------------------------------------------------

/// Index into the operator alphabet of the active [`DispersionSpec`].
pub type Label = u8;

/// Edge decoration: operator label plus conjugation bit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct EdgeDecoration {
    pub label: Label,
    pub conj: bool,
}

impl EdgeDecoration {
    pub fn new(label: Label, conj: bool) -> Self {
        Self { label, conj }
    }
}

impl Serialize for EdgeDecoration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(2))?;
        seq.serialize_element(&self.label)?;
        seq.serialize_element(&(self.conj as u8))?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for EdgeDecoration {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: (Label, u8) = Deserialize::deserialize(deserializer)?;
        Ok(Self::new(raw.0, raw.1 != 0))
    }
}

/// A decorated tree, represented by the node below the implicit root.
///
/// `edge` is the edge connecting this node upward, `freq` the node frequency,
/// `poly_exp` the time-monomial exponent (zero outside intermediate values of
/// the approximation recursion), and `children` the unordered subtrees, kept
/// sorted in canonical order.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct DecoratedTree {
    pub edge: EdgeDecoration,
    pub freq: LinearFrequency,
    #[serde(default, rename = "ell")]
    pub poly_exp: u32,
    #[serde(default)]
    pub children: Vec<DecoratedTree>,
}

impl DecoratedTree {
    pub fn leaf(edge: EdgeDecoration, freq: LinearFrequency) -> Self {
        Self {
            edge,
            freq,
            poly_exp: 0,
            children: vec![],
        }
    }

    pub fn node(edge: EdgeDecoration, freq: LinearFrequency, children: Vec<Self>) -> Self {
        let mut t = Self {
            edge,
            freq,
            poly_exp: 0,
            children,
        };
        t.canonicalize();
        t
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The frequency with the edge's conjugation sign applied:
    /// `(-1)^p * freq`.
    pub fn signed_freq(&self) -> LinearFrequency {
        if self.edge.conj {
            self.freq.neg()
        } else {
            self.freq.clone()
        }
    }

    /// Sort all children recursively into canonical order
    /// (edge label, conjugation bit, recursive encoding).
    pub fn canonicalize(&mut self) {
        for c in &mut self.children {
            c.canonicalize();
        }
        self.children.sort_by_cached_key(|c| c.canonical_bytes());
    }

    /// Canonicalize and report where the leaves went: the returned vector
    /// lists, in the new traversal order, each leaf's position in the old
    /// traversal order.
    pub fn canonicalize_tracking(&mut self) -> Vec<usize> {
        let mut next = 0usize;
        self.canon_tracked(&mut next)
    }

    fn canon_tracked(&mut self, next: &mut usize) -> Vec<usize> {
        if self.is_leaf() {
            let idx = *next;
            *next += 1;
            return vec![idx];
        }
        let mut tagged: Vec<(DecoratedTree, Vec<usize>)> = std::mem::take(&mut self.children)
            .into_iter()
            .map(|mut c| {
                let leaves = c.canon_tracked(next);
                (c, leaves)
            })
            .collect();
        tagged.sort_by_cached_key(|(c, _)| c.canonical_bytes());
        let mut order = Vec::new();
        for (c, leaves) in tagged {
            self.children.push(c);
            order.extend(leaves);
        }
        order
    }

    /// Deterministic byte encoding, invariant under child reordering.
    ///
    /// Two trees are equal as non-planar decorated trees iff their encodings
    /// agree.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_canonical(&mut out);
        out
    }

    fn encode_canonical(&self, out: &mut Vec<u8>) {
        out.push(self.edge.label);
        out.push(self.edge.conj as u8);
        self.freq.encode(out);
        out.extend_from_slice(&self.poly_exp.to_be_bytes());
        let mut encs: Vec<Vec<u8>> = self.children.iter().map(|c| c.canonical_bytes()).collect();
        encs.sort();
        out.extend_from_slice(&(encs.len() as u32).to_be_bytes());
        for e in encs {
            out.extend_from_slice(&e);
        }
    }

    /// Edge-decorated skeleton encoding: shape and edge decorations only,
    /// ignoring node decorations. Used by the symmetry factor and by the
    /// pairing-class census.
    pub fn skeleton_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_skeleton(&mut out);
        out
    }

    fn encode_skeleton(&self, out: &mut Vec<u8>) {
        out.push(self.edge.label);
        out.push(self.edge.conj as u8);
        let mut encs: Vec<Vec<u8>> = self.children.iter().map(|c| c.skeleton_bytes()).collect();
        encs.sort();
        out.extend_from_slice(&(encs.len() as u32).to_be_bytes());
        for e in encs {
            out.extend_from_slice(&e);
        }
    }

    /// Leaves in canonical traversal order.
    pub fn leaves(&self) -> Vec<&DecoratedTree> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a DecoratedTree>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(Self::leaf_count).sum()
        }
    }

    /// Total number of integrator edges in the tree.
    pub fn n_plus(&self, spec: &DispersionSpec) -> u32 {
        let own = spec.is_integrator(self.edge.label) as u32;
        own + self.children.iter().map(|c| c.n_plus(spec)).sum::<u32>()
    }

    /// Apply a symbol substitution everywhere in the tree.
    pub fn substitute(&self, sym: SymbolId, repl: &LinearFrequency) -> Self {
        let mut t = self.substitute_raw(sym, repl);
        t.canonicalize();
        t
    }

    /// Substitution preserving child positions (no re-canonicalisation);
    /// used while leaf indices must stay stable.
    pub fn substitute_raw(&self, sym: SymbolId, repl: &LinearFrequency) -> Self {
        Self {
            edge: self.edge,
            freq: self.freq.substitute(sym, repl),
            poly_exp: self.poly_exp,
            children: self
                .children
                .iter()
                .map(|c| c.substitute_raw(sym, repl))
                .collect(),
        }
    }

    /// Rename every symbol through the map (symbols absent from the map are
    /// kept), preserving child positions.
    pub fn rename_symbols_raw(&self, map: &BTreeMap<SymbolId, (SymbolId, i32)>) -> Self {
        let rename = |f: &LinearFrequency| {
            let mut out = LinearFrequency::zero();
            for (s, c) in f.terms() {
                match map.get(&s) {
                    Some(&(ns, sign)) => out.add_i(ns, c * sign),
                    None => out.add_i(s, c),
                }
            }
            out
        };
        Self {
            edge: self.edge,
            freq: rename(&self.freq),
            poly_exp: self.poly_exp,
            children: self
                .children
                .iter()
                .map(|c| c.rename_symbols_raw(map))
                .collect(),
        }
    }

    /// Rename every symbol through the map and re-canonicalise.
    pub fn rename_symbols(&self, map: &BTreeMap<SymbolId, (SymbolId, i32)>) -> Self {
        let mut t = self.rename_symbols_raw(map);
        t.canonicalize();
        t
    }

    pub fn all_symbols(&self) -> Vec<SymbolId> {
        let mut set = std::collections::BTreeSet::new();
        self.visit(&mut |t| set.extend(t.freq.symbols()));
        set.into_iter().collect()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&DecoratedTree)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

// ---------------------------------------------------------------------------
// Kirchhoff, degree, order projection
// ---------------------------------------------------------------------------

/// Signed-frequency balance at every inner node:
/// `(-1)^{p(e_u)} freq(u) = sum_children (-1)^{p(e_c)} freq(c)`.
pub fn kirchhoff_valid(tree: &DecoratedTree) -> bool {
    if tree.is_leaf() {
        return true;
    }
    let mut sum = LinearFrequency::zero();
    for c in &tree.children {
        sum = sum.add(&c.signed_freq());
    }
    tree.signed_freq() == sum && tree.children.iter().all(kirchhoff_valid)
}

/// Maximum count, along any leaf-to-root path, of integrator edges plus
/// time-monomial exponents.
pub fn degree(tree: &DecoratedTree, spec: &DispersionSpec) -> u32 {
    let own = tree.poly_exp + spec.is_integrator(tree.edge.label) as u32;
    own + tree.children.iter().map(|c| degree(c, spec)).max().unwrap_or(0)
}

/// A decorated tree together with an approximation order at the root.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ApproxTree {
    pub tree: DecoratedTree,
    pub order: i32,
}

/// Assign order `r` to the root: non-zero only when `r + 1 >= degree(tree)`.
pub fn project_order(tree: &DecoratedTree, r: i32, spec: &DispersionSpec) -> Option<ApproxTree> {
    if r + 1 >= degree(tree, spec) as i32 {
        Some(ApproxTree {
            tree: tree.clone(),
            order: r,
        })
    } else {
        None
    }
}

/// Number of internal symmetries of the edge-decorated skeleton; node
/// decorations are ignored.
pub fn symmetry_factor(tree: &DecoratedTree) -> u64 {
    if tree.is_leaf() {
        return 1;
    }
    let mut groups: BTreeMap<Vec<u8>, (u64, u64)> = BTreeMap::new();
    for c in &tree.children {
        let key = c.skeleton_bytes();
        let s = symmetry_factor(c);
        let e = groups.entry(key).or_insert((0, s));
        e.0 += 1;
    }
    let mut total = 1u64;
    for (count, s) in groups.values() {
        total *= factorial(*count) * s.pow(*count as u32);
    }
    total
}

fn factorial(n: u64) -> u64 {
    (1..=n).product::<u64>().max(1)
}

// ---------------------------------------------------------------------------
// Dispersion specification
// ---------------------------------------------------------------------------

/// One operator label of the alphabet.
#[derive(Clone, Debug)]
pub struct LabelSpec {
    pub name: String,
    /// Whether the label lies in the integrator subset of the alphabet.
    pub integrator: bool,
    /// Coefficients of the univariate dispersion polynomial; index = power.
    /// Applied to a d-dimensional frequency component-wise and summed,
    /// so `-X^2` evaluates to `-|k|^2`.
    pub dispersion: Vec<i64>,
}

/// The equation instance: operator alphabet with dispersion polynomials,
/// nonlinearity exponents `p(u, ubar) = prefactor * u^N ubar^M`, and the
/// derivative symbol applied to the nonlinearity.
#[derive(Clone, Debug)]
pub struct DispersionSpec {
    pub name: String,
    pub labels: Vec<LabelSpec>,
    pub n_factors: u32,
    pub m_factors: u32,
    pub prefactor: CRat,
    /// Weight of the derivative multiplier: the nonlinearity enters Duhamel's
    /// formula through the symbol `(i k)^alpha` (identity for alpha = 0).
    pub alpha: u32,
    pub dimension: usize,
}

/// Labels used by the two-letter alphabets of the concrete equations.
pub const LABEL_PROPAGATOR: Label = 0;
pub const LABEL_INTEGRATOR: Label = 1;

impl DispersionSpec {
    /// Cubic Schroedinger: `i u_t + Laplace u = |u|^2 u`.
    pub fn nls() -> Self {
        Self {
            name: "nls".into(),
            labels: vec![
                LabelSpec {
                    name: "t1".into(),
                    integrator: false,
                    dispersion: vec![0, 0, -1], // -X^2
                },
                LabelSpec {
                    name: "t2".into(),
                    integrator: true,
                    dispersion: vec![0, 0, 1], // X^2
                },
            ],
            n_factors: 2,
            m_factors: 1,
            prefactor: CRat::one(),
            alpha: 0,
            dimension: 1,
        }
    }

    /// Korteweg-de Vries: `u_t + u_xxx = 1/2 (u^2)_x`, cast as
    /// `i u_t + i u_xxx = d_x (i/2 u^2)`.
    pub fn kdv() -> Self {
        Self {
            name: "kdv".into(),
            labels: vec![
                LabelSpec {
                    name: "t1".into(),
                    integrator: false,
                    dispersion: vec![0, 0, 0, -1], // -X^3
                },
                LabelSpec {
                    name: "t2".into(),
                    integrator: true,
                    dispersion: vec![0, 0, 0, 1], // X^3
                },
            ],
            n_factors: 2,
            m_factors: 0,
            prefactor: CRat::new(Rational64::zero(), Rational64::new(1, 2)), // i/2
            alpha: 1,
            dimension: 1,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "nls" => Some(Self::nls()),
            "kdv" => Some(Self::kdv()),
            _ => None,
        }
    }

    pub fn with_dimension(mut self, d: usize) -> Self {
        self.dimension = d;
        self
    }

    pub fn is_integrator(&self, label: Label) -> bool {
        self.labels[label as usize].integrator
    }

    pub fn arity(&self) -> u32 {
        self.n_factors + self.m_factors
    }

    /// Dispersion polynomial of a label evaluated on an integer frequency
    /// vector (component-wise sum).
    pub fn dispersion_value(&self, label: Label, k: &[i64]) -> i64 {
        let coeffs = &self.labels[label as usize].dispersion;
        k.iter()
            .map(|&ki| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(p, &c)| c * ki.pow(p as u32))
                    .sum::<i64>()
            })
            .sum()
    }

    /// Edge phase `(-1)^p P_label(k)` of an edge at a concrete frequency.
    ///
    /// The conjugation bit negates the phase, so a fully conjugated tree
    /// evaluates to the complex conjugate of its unconjugated counterpart.
    pub fn edge_phase(&self, edge: EdgeDecoration, k: &[i64]) -> f64 {
        let v = self.dispersion_value(edge.label, k) as f64;
        if edge.conj {
            -v
        } else {
            v
        }
    }

    /// Symbolic edge phase for d = 1.
    pub fn edge_phase_sym(&self, edge: EdgeDecoration, freq: &LinearFrequency) -> SymPoly {
        assert_eq!(self.dimension, 1, "symbolic phases are univariate");
        let base = freq.to_sympoly();
        let coeffs = &self.labels[edge.label as usize].dispersion;
        let mut p = SymPoly::zero();
        for (pow, &c) in coeffs.iter().enumerate() {
            if c != 0 {
                p = p.add(&base.pow(pow as u32).scale(Rational64::from_integer(c)));
            }
        }
        if edge.conj {
            p.neg()
        } else {
            p
        }
    }

    /// The derivative symbol `(i k)^alpha` at a concrete frequency.
    pub fn derivative_symbol(&self, k: &[i64]) -> Complex64 {
        match self.alpha {
            0 => Complex64::new(1.0, 0.0),
            a => {
                debug_assert_eq!(self.dimension, 1, "alpha > 0 is supported for d = 1");
                Complex64::new(0.0, k[0] as f64).powu(a)
            }
        }
    }

    /// Symbolic `(i k)^alpha` for d = 1.
    pub fn derivative_symbol_sym(&self, freq: &LinearFrequency) -> crate::sympoly::CPoly {
        crate::sympoly::CPoly::i_times_pow(&freq.to_sympoly(), self.alpha)
    }

    /// Prefactor of an integrator edge: `-i (ik)^alpha` for an unconjugated
    /// edge and its complex conjugate for a conjugated one, so that taking
    /// the conjugate of a tree conjugates its value.
    pub fn integrator_prefactor(&self, conj: bool, k: &[i64]) -> Complex64 {
        let b = self.derivative_symbol(k);
        let v = Complex64::new(0.0, -1.0) * b;
        if conj {
            v.conj()
        } else {
            v
        }
    }

    /// Symbolic integrator prefactor for d = 1.
    pub fn integrator_prefactor_sym(&self, conj: bool, freq: &LinearFrequency) -> crate::sympoly::CPoly {
        let b = self.derivative_symbol_sym(freq);
        let v = b.scale(&CRat::i().neg());
        if conj {
            v.conj()
        } else {
            v
        }
    }

    /// Linear phase of the true equation's free flow, `u_k ~ e^{i t L(k)}`.
    ///
    /// NLS: `-|k|^2`. KdV: `+k^3`.
    pub fn linear_phase(&self, k: &[i64]) -> f64 {
        match self.name.as_str() {
            "kdv" => k.iter().map(|&ki| (ki * ki * ki) as f64).sum(),
            _ => self.dispersion_value(LABEL_PROPAGATOR, k) as f64,
        }
    }
}

// ---------------------------------------------------------------------------
// Elementary differentials
// ---------------------------------------------------------------------------

/// One initial-data factor `v_freq` (conj = false) or `conj(v_freq)`
/// (conj = true).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct VFactor {
    pub freq: LinearFrequency,
    pub conj: bool,
}

impl VFactor {
    /// Rewrite `v_{-a}` as `conj(v_a)` using the real-data symmetry, so that
    /// the leading coefficient of every factor is non-negative.
    pub fn normalize_real(&self) -> Self {
        if self.freq.leading_sign() < 0 {
            Self {
                freq: self.freq.neg(),
                conj: !self.conj,
            }
        } else {
            self.clone()
        }
    }
}

impl fmt::Display for VFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conj {
            write!(f, "conj(v[{}])", self.freq)
        } else {
            write!(f, "v[{}]", self.freq)
        }
    }
}

/// Normal form of an elementary differential: a complex rational scalar times
/// a multiset of initial-data factors, one per leaf.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Upsilon {
    pub scalar: CRat,
    pub factors: Vec<VFactor>,
}

impl Upsilon {
    pub fn conj(&self) -> Self {
        Self {
            scalar: self.scalar.conj(),
            factors: self
                .factors
                .iter()
                .map(|f| VFactor {
                    freq: f.freq.clone(),
                    conj: !f.conj,
                })
                .collect(),
        }
    }

    fn sort(&mut self) {
        self.factors.sort();
    }

    /// Evaluate on a concrete real profile (d = 1): `v_a` at the assigned
    /// integer frequency.
    pub fn eval(
        &self,
        profile: &dyn Fn(i64) -> f64,
        assign: &dyn Fn(SymbolId) -> Vec<i64>,
    ) -> Complex64 {
        let (re, im) = self.scalar.to_f64();
        let mut acc = Complex64::new(re, im);
        for f in &self.factors {
            let kv = f.freq.eval(assign, 1);
            // real profiles: conjugation is the identity
            acc *= profile(kv[0]);
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeError {
    /// Inner node arity differs from the nonlinearity exponents.
    BadArity { expected: u32, found: u32 },
    /// Conjugation bits of the children are inconsistent with the grammar.
    BadConjugation,
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::BadArity { expected, found } => {
                write!(f, "inner node arity {} exceeds nonlinearity arity {}", found, expected)
            }
            TreeError::BadConjugation => write!(f, "child conjugation bits do not match p(u, ubar)"),
        }
    }
}

impl std::error::Error for TreeError {}

/// Elementary differential of a Duhamel tree: the product over leaves of
/// `v`/`conj(v)` factors times the iterated derivatives of the nonlinearity.
///
/// The nonlinearity prefactor is housed here; the `-i (ik)^alpha` factor of
/// Duhamel's formula is housed in the integrator edge of the character.
/// Factors are normalised with the real-data symmetry `v_{-a} = conj(v_a)`.
pub fn upsilon(tree: &DecoratedTree, spec: &DispersionSpec) -> Result<Upsilon, TreeError> {
    let mut u = upsilon_raw(tree, spec)?;
    u.factors = u.factors.iter().map(VFactor::normalize_real).collect();
    u.sort();
    Ok(u)
}

fn upsilon_raw(tree: &DecoratedTree, spec: &DispersionSpec) -> Result<Upsilon, TreeError> {
    if tree.is_leaf() {
        return Ok(Upsilon {
            scalar: CRat::one(),
            factors: vec![VFactor {
                freq: tree.freq.clone(),
                conj: tree.edge.conj,
            }],
        });
    }
    // grammar: propagator node with a single integrator child holding the
    // nonlinearity arguments
    let inner = &tree.children[0];
    let kids = &inner.children;
    if kids.len() as u32 != spec.arity() {
        return Err(TreeError::BadArity {
            expected: spec.arity(),
            found: kids.len() as u32,
        });
    }
    let a = tree.edge.conj;
    let plain = kids.iter().filter(|c| !c.edge.conj).count() as u32;
    let conjd = kids.len() as u32 - plain;
    let (want_plain, want_conj) = if a {
        (spec.m_factors, spec.n_factors)
    } else {
        (spec.n_factors, spec.m_factors)
    };
    if (plain, conjd) != (want_plain, want_conj) {
        return Err(TreeError::BadConjugation);
    }
    // d_v^n d_vbar^m p_a at a monomial nonlinearity: prefactor * N! * M!
    let fact = Rational64::from_integer(
        (factorial(spec.n_factors as u64) * factorial(spec.m_factors as u64)) as i64,
    );
    let node_scalar = if a {
        spec.prefactor.conj().scale(fact)
    } else {
        spec.prefactor.scale(fact)
    };
    let mut scalar = node_scalar;
    let mut factors = Vec::new();
    for c in kids {
        let child = upsilon_raw(c, spec)?;
        scalar = scalar.mul(&child.scalar);
        factors.extend(child.factors);
    }
    Ok(Upsilon { scalar, factors })
}
