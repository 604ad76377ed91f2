//! Duhamel tree sets, Wick pairings, and paired-forest classes.
//!
//! The second moment of the truncated Duhamel series expands, by Wick's
//! theorem, into a sum over perfect matchings of the leaves of two decorated
//! trees. Each matching fixes frequencies through delta constraints; matchings
//! are grouped into classes that contribute identically to the truncated
//! scheme, and the class multiplicity `m_F` counts the matchings in a class.
//!
//! Classes are keyed by the edge-decorated skeletons of the two trees, the
//! canonical initial-data monomial, and the vanishing pattern of the
//! resonance phases at the integrator nodes (zero / pure squares / mixed
//! cross terms), minimised over signed permutations of the free symbols and,
//! for equal skeletons, over the orientation swap. Multiplicities are never
//! hardcoded: the published tables are regression tests over this
//! enumeration.

use crate::sympoly::{SymPoly, SymbolId, ROOT_SYMBOL};
use crate::trees::{
    kirchhoff_valid, DecoratedTree, DispersionSpec, EdgeDecoration, LinearFrequency,
    LABEL_INTEGRATOR, LABEL_PROPAGATOR,
};
use serde::Serialize;
use std::collections::BTreeMap;

/// Gaussian flavour of the initial data.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum NoiseMode {
    /// Real field: `eta_{-k} = conj(eta_k)`, `E(eta_k eta_{-l}) = delta_{kl}`.
    RealGaussian,
    /// I.i.d. standard complex: `E(eta_k eta_l) = 0` for all k, l.
    ComplexGaussian,
}

// ---------------------------------------------------------------------------
// Duhamel tree sets
// ---------------------------------------------------------------------------

/// All tree shapes of the Duhamel iteration with at most `r + 1` integrator
/// edges, decorated with fresh leaf symbols and root-adjacent frequency `k`
/// (symbol 0).
pub fn duhamel_trees(spec: &DispersionSpec, r: i32) -> Vec<DecoratedTree> {
    assert!((0..=1).contains(&r), "supported truncation orders are 0 and 1");
    let cap = (r + 1) as u32;
    let shapes = tree_shapes(spec, false, cap);
    let mut out: Vec<DecoratedTree> = shapes
        .iter()
        .map(|s| decorate_shape(s, &mut SymbolGen::new(1)))
        .collect();
    out.sort_by_cached_key(|t| (t.n_plus(spec), t.canonical_bytes()));
    out
}

/// Undecorated shapes (frequencies all zero) of one side of the grammar.
fn tree_shapes(spec: &DispersionSpec, conj_side: bool, cap: u32) -> Vec<DecoratedTree> {
    let mut out = vec![DecoratedTree::leaf(
        EdgeDecoration::new(LABEL_PROPAGATOR, conj_side),
        LinearFrequency::zero(),
    )];
    if cap == 0 {
        return out;
    }
    let plain = tree_shapes(spec, conj_side, cap - 1);
    let conjd = tree_shapes(spec, !conj_side, cap - 1);
    let plain_sets = multisets(&plain, spec.n_factors as usize);
    let conj_sets = multisets(&conjd, spec.m_factors as usize);
    let mut seen = std::collections::BTreeSet::new();
    for t in &out {
        seen.insert(t.canonical_bytes());
    }
    for ps in &plain_sets {
        for cs in &conj_sets {
            let children: Vec<DecoratedTree> = ps.iter().chain(cs.iter()).cloned().collect();
            let inner_n: u32 = children.iter().map(|c| c.n_plus(spec)).sum();
            if inner_n + 1 > cap {
                continue;
            }
            let inner = DecoratedTree::node(
                EdgeDecoration::new(LABEL_INTEGRATOR, conj_side),
                LinearFrequency::zero(),
                children,
            );
            let tree = DecoratedTree::node(
                EdgeDecoration::new(LABEL_PROPAGATOR, conj_side),
                LinearFrequency::zero(),
                vec![inner],
            );
            if seen.insert(tree.canonical_bytes()) {
                out.push(tree);
            }
        }
    }
    out.sort_by_cached_key(|t| (t.n_plus(spec), t.skeleton_bytes()));
    out
}

/// Multisets of size `n` drawn from `items`.
fn multisets(items: &[DecoratedTree], n: usize) -> Vec<Vec<DecoratedTree>> {
    fn rec(items: &[DecoratedTree], n: usize, start: usize, acc: &mut Vec<DecoratedTree>, out: &mut Vec<Vec<DecoratedTree>>) {
        if n == 0 {
            out.push(acc.clone());
            return;
        }
        for i in start..items.len() {
            acc.push(items[i].clone());
            rec(items, n - 1, i, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, n, 0, &mut Vec::new(), &mut out);
    out
}

struct SymbolGen {
    next: SymbolId,
}

impl SymbolGen {
    fn new(start: SymbolId) -> Self {
        Self { next: start }
    }
    fn fresh(&mut self) -> SymbolId {
        let s = self.next;
        self.next += 1;
        s
    }
}

/// Assign fresh symbols to the leaves, fill inner frequencies by Kirchhoff's
/// law, and bind the root-adjacent frequency to `k` by eliminating one leaf
/// symbol.
fn decorate_shape(shape: &DecoratedTree, gen: &mut SymbolGen) -> DecoratedTree {
    fn fill(shape: &DecoratedTree, gen: &mut SymbolGen) -> DecoratedTree {
        if shape.is_leaf() {
            return DecoratedTree::leaf(shape.edge, LinearFrequency::symbol(gen.fresh()));
        }
        let children: Vec<DecoratedTree> = shape.children.iter().map(|c| fill(c, gen)).collect();
        let mut signed = LinearFrequency::zero();
        for c in &children {
            signed = signed.add(&c.signed_freq());
        }
        // Kirchhoff: (-1)^p freq = signed sum of children
        let freq = if shape.edge.conj { signed.neg() } else { signed };
        let mut t = DecoratedTree {
            edge: shape.edge,
            freq,
            poly_exp: 0,
            children,
        };
        t.canonicalize();
        t
    }
    let t = fill(shape, gen);
    // bind root frequency to k: freq(root) - k = 0
    let constraint = t.freq.sub(&LinearFrequency::symbol(ROOT_SYMBOL));
    if constraint.is_zero() {
        return t;
    }
    let (sym, c) = constraint
        .terms()
        .filter(|&(s, c)| s != ROOT_SYMBOL && c.abs() == 1)
        .last()
        .expect("a leaf symbol with unit coefficient");
    let rest = constraint.sub(&LinearFrequency::symbol(sym).scaled(c));
    let repl = rest.scaled(-c);
    t.substitute(sym, &repl)
}

// ---------------------------------------------------------------------------
// Wick pairings
// ---------------------------------------------------------------------------

/// All perfect matchings of `0..n`; empty when `n` is odd.
pub fn wick_pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    if n % 2 != 0 {
        return out;
    }
    fn rec(unused: &mut Vec<usize>, acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if unused.is_empty() {
            out.push(acc.clone());
            return;
        }
        let a = unused[0];
        for j in 1..unused.len() {
            let b = unused[j];
            let mut rest: Vec<usize> = unused
                .iter()
                .copied()
                .filter(|&x| x != a && x != b)
                .collect();
            acc.push((a, b));
            rec(&mut rest, acc, out);
            acc.pop();
        }
    }
    let mut unused: Vec<usize> = (0..n).collect();
    rec(&mut unused, &mut Vec::new(), &mut out);
    out
}

/// One Gaussian factor of a moment: `eta_freq` (conj = false) or its
/// conjugate, with `side` marking factors that come under an outer
/// conjugation (the left tree of a paired forest).
#[derive(Clone, Debug)]
pub struct GaussianFactor {
    pub freq: Vec<i64>,
    pub conj: bool,
    pub left_side: bool,
}

impl GaussianFactor {
    /// Effective conjugation after applying the outer conjugation of the
    /// left tree.
    fn effective_conj(&self) -> bool {
        self.conj ^ self.left_side
    }
}

/// Expected pair value `E(x y)` of two Gaussian factors at concrete
/// frequencies.
fn pair_value(a: &GaussianFactor, b: &GaussianFactor, mode: NoiseMode) -> f64 {
    let (ca, cb) = (a.effective_conj(), b.effective_conj());
    let same_type = ca == cb;
    match (mode, same_type) {
        // E(eta_a eta_b) = delta_{a+b,0} and conjugates, real mode only
        (NoiseMode::RealGaussian, true) => {
            let sum_zero = a.freq.iter().zip(&b.freq).all(|(x, y)| x + y == 0);
            sum_zero as u8 as f64
        }
        (NoiseMode::ComplexGaussian, true) => 0.0,
        // E(eta_a conj(eta_b)) = delta_{a,b}
        (_, false) => {
            let eq = a.freq == b.freq;
            eq as u8 as f64
        }
    }
}

/// Wick prediction for `E(prod of Gaussian factors)` at concrete frequencies:
/// the sum over perfect matchings of products of pair expectations.
pub fn wick_moment(factors: &[GaussianFactor], mode: NoiseMode) -> f64 {
    wick_pairings(factors.len())
        .iter()
        .map(|m| {
            m.iter()
                .map(|&(i, j)| pair_value(&factors[i], &factors[j], mode))
                .product::<f64>()
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Paired forests
// ---------------------------------------------------------------------------

/// Two decorated trees with a perfect matching on their leaves; the
/// substitution eliminates the frequency symbols bound by the Wick delta
/// constraints.
#[derive(Clone, Debug)]
pub struct PairedForest {
    pub left: DecoratedTree,
    pub right: DecoratedTree,
    /// Matched leaf pairs as global leaf indices, left leaves first.
    pub matching: Vec<(u32, u32)>,
    pub substitution: BTreeMap<SymbolId, LinearFrequency>,
    pub free_symbols: Vec<SymbolId>,
}

impl PairedForest {
    /// Root condition: the signed root-adjacent frequencies agree.
    pub fn root_condition(&self) -> bool {
        self.left.signed_freq() == self.right.signed_freq()
    }

    /// Leaf condition for every matched pair, with the sign flip for
    /// same-tree pairs.
    pub fn leaf_condition(&self) -> bool {
        let n_left = self.left.leaf_count() as u32;
        let left = self.left.leaves();
        let right = self.right.leaves();
        let signed = |g: u32| -> LinearFrequency {
            if g < n_left {
                left[g as usize].signed_freq()
            } else {
                right[(g - n_left) as usize].signed_freq()
            }
        };
        self.matching.iter().all(|&(a, b)| {
            let same_tree = (a < n_left) == (b < n_left);
            let (sa, sb) = (signed(a), signed(b));
            if same_tree {
                sa.add(&sb).is_zero()
            } else {
                sa == sb
            }
        })
    }

    /// Whether any matched pair is of same-orientation type `E(eta eta)`,
    /// which vanishes for complex Gaussian data.
    pub fn has_same_sign_pair(&self) -> bool {
        let n_left = self.left.leaf_count() as u32;
        let left = self.left.leaves();
        let right = self.right.leaves();
        let bit = |g: u32| -> bool {
            if g < n_left {
                left[g as usize].edge.conj
            } else {
                right[(g - n_left) as usize].edge.conj
            }
        };
        self.matching.iter().any(|&(a, b)| {
            let cross = (a < n_left) != (b < n_left);
            if cross {
                bit(a) != bit(b)
            } else {
                bit(a) == bit(b)
            }
        })
    }

    /// Restore canonical child order on both trees, remapping the matching
    /// indices through the leaf permutation.
    pub fn recanonicalize(&mut self) {
        let n_left = self.left.leaf_count() as u32;
        let perm_l = self.left.canonicalize_tracking();
        let perm_r = self.right.canonicalize_tracking();
        // perm[new] = old; build old -> new
        let mut inv_l = vec![0u32; perm_l.len()];
        for (new, &old) in perm_l.iter().enumerate() {
            inv_l[old] = new as u32;
        }
        let mut inv_r = vec![0u32; perm_r.len()];
        for (new, &old) in perm_r.iter().enumerate() {
            inv_r[old] = new as u32;
        }
        let remap = |g: u32| {
            if g < n_left {
                inv_l[g as usize]
            } else {
                n_left + inv_r[(g - n_left) as usize]
            }
        };
        let mut matching: Vec<(u32, u32)> = self
            .matching
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (remap(a), remap(b));
                if x <= y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect();
        matching.sort();
        self.matching = matching;
    }

    pub fn mirror(&self) -> PairedForest {
        let n_left = self.left.leaf_count() as u32;
        let n_right = self.right.leaf_count() as u32;
        let swap = |g: u32| if g < n_left { g + n_right } else { g - n_left };
        let mut matching: Vec<(u32, u32)> = self
            .matching
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (swap(a), swap(b));
                if x <= y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect();
        matching.sort();
        PairedForest {
            left: self.right.clone(),
            right: self.left.clone(),
            matching,
            substitution: self.substitution.clone(),
            free_symbols: self.free_symbols.clone(),
        }
    }

    /// Resonance phase at every integrator node, in pre-order over
    /// (left, right): the phase of the integrand once all inner integrals are
    /// reduced to their polynomial parts.
    pub fn resonance_phases(&self, spec: &DispersionSpec) -> Vec<SymPoly> {
        let mut out = Vec::new();
        for tree in [&self.left, &self.right] {
            tree.visit(&mut |node| {
                if spec.is_integrator(node.edge.label) {
                    let mut phase = spec.edge_phase_sym(node.edge, &node.freq);
                    for c in &node.children {
                        phase = phase.add(&spec.edge_phase_sym(c.edge, &c.freq));
                    }
                    out.push(phase);
                }
            });
        }
        out
    }
}

/// One class of the census: a canonical-minimal representative, the matching
/// count `m_F`, and every member matching (class members share the truncated
/// scheme value; exact-character evaluation sums the members individually).
#[derive(Clone, Debug)]
pub struct PairingClass {
    pub representative: PairedForest,
    pub multiplicity: u32,
    pub members: Vec<PairedForest>,
    /// True when the two shapes differ, in which case the series also
    /// contains the mirror orientation of every member.
    pub mirrored: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum PhaseKind {
    Zero,
    Squares,
    Mixed,
}

fn phase_kind(p: &SymPoly) -> PhaseKind {
    if p.is_zero() {
        PhaseKind::Zero
    } else if p.has_mixed_monomial() {
        PhaseKind::Mixed
    } else {
        PhaseKind::Squares
    }
}

/// Enumerate the paired-forest classes of order `r` for the output frequency
/// `k` (symbol 0).
pub fn paired_forest_classes(
    spec: &DispersionSpec,
    r: i32,
    mode: NoiseMode,
) -> Vec<PairingClass> {
    assert!((0..=1).contains(&r), "supported truncation orders are 0 and 1");
    let cap = (r + 1) as u32;
    let shapes = tree_shapes(spec, false, cap);

    let mut classes: Vec<PairingClass> = Vec::new();
    for (i, sa) in shapes.iter().enumerate() {
        for sb in shapes.iter().skip(i) {
            let same_shape = sa.skeleton_bytes() == sb.skeleton_bytes();
            let mut gen = SymbolGen::new(1);
            let left = decorate_shape(sa, &mut gen);
            let right = decorate_shape(sb, &mut gen);
            if left.n_plus(spec) + right.n_plus(spec) > cap {
                continue;
            }
            let bucket = enumerate_bucket(spec, &left, &right, same_shape, mode);
            classes.extend(bucket);
        }
    }
    classes.sort_by_cached_key(|c| {
        (
            c.representative.left.n_plus(spec) + c.representative.right.n_plus(spec),
            c.representative.left.skeleton_bytes(),
            c.representative.right.skeleton_bytes(),
            c.representative.left.canonical_bytes(),
            c.representative.right.canonical_bytes(),
        )
    });
    classes
}

/// Retain only the classes that survive for the given noise mode: in complex
/// mode a class containing any same-orientation pairing `E(eta eta)` drops.
pub fn complex_case_filter(classes: Vec<PairingClass>, mode: NoiseMode) -> Vec<PairingClass> {
    match mode {
        NoiseMode::RealGaussian => classes,
        NoiseMode::ComplexGaussian => classes
            .into_iter()
            .filter(|c| !c.members.iter().any(|m| m.has_same_sign_pair()))
            .collect(),
    }
}

fn enumerate_bucket(
    spec: &DispersionSpec,
    left: &DecoratedTree,
    right: &DecoratedTree,
    same_shape: bool,
    mode: NoiseMode,
) -> Vec<PairingClass> {
    let n_left = left.leaf_count();
    let n_total = n_left + right.leaf_count();
    let mut groups: BTreeMap<Vec<u8>, Vec<PairedForest>> = BTreeMap::new();

    for matching in wick_pairings(n_total) {
        let forest = match solve_matching(left, right, &matching) {
            Some(f) => f,
            None => continue,
        };
        if mode == NoiseMode::ComplexGaussian && forest.has_same_sign_pair() {
            continue;
        }
        debug_assert!(forest.root_condition());
        debug_assert!(forest.leaf_condition());
        debug_assert!(kirchhoff_valid(&forest.left) && kirchhoff_valid(&forest.right));
        let key = census_key(spec, &forest, same_shape);
        groups.entry(key).or_default().push(forest);
    }

    groups
        .into_values()
        .map(|mut members| {
            for m in &mut members {
                *m = canonical_variant(m).0;
            }
            members.sort_by_cached_key(forest_bytes);
            let representative = members[0].clone();
            PairingClass {
                multiplicity: members.len() as u32,
                representative,
                members,
                mirrored: !same_shape,
            }
        })
        .collect()
}

/// Apply the Wick delta constraints of a matching and return the substituted
/// forest, or `None` when the matching only holds on a sublattice of generic
/// frequencies.
fn solve_matching(
    left: &DecoratedTree,
    right: &DecoratedTree,
    matching: &[(usize, usize)],
) -> Option<PairedForest> {
    let n_left = left.leaf_count();
    let mut constraints: Vec<LinearFrequency> = Vec::new();
    {
        let ll = left.leaves();
        let rl = right.leaves();
        let get = |g: usize| -> (LinearFrequency, bool) {
            if g < n_left {
                (ll[g].signed_freq(), true)
            } else {
                (rl[g - n_left].signed_freq(), false)
            }
        };
        for &(a, b) in matching {
            let (sa, la) = get(a);
            let (sb, lb) = get(b);
            // same tree: signed frequencies cancel; across trees: they agree
            let c = if la == lb { sa.add(&sb) } else { sa.sub(&sb) };
            constraints.push(c);
        }
    }

    let mut lt = left.clone();
    let mut rt = right.clone();
    let mut subst: BTreeMap<SymbolId, LinearFrequency> = BTreeMap::new();
    while let Some(pos) = constraints.iter().position(|c| !c.is_zero()) {
        let c = constraints.remove(pos);
        let pivot = c
            .terms()
            .filter(|&(s, v)| s != ROOT_SYMBOL && v.abs() == 1)
            .last()?;
        let (sym, coeff) = pivot;
        let rest = c.sub(&LinearFrequency::symbol(sym).scaled(coeff));
        let repl = rest.scaled(-coeff);
        lt = lt.substitute_raw(sym, &repl);
        rt = rt.substitute_raw(sym, &repl);
        for cc in &mut constraints {
            *cc = cc.substitute(sym, &repl);
        }
        for v in subst.values_mut() {
            *v = v.substitute(sym, &repl);
        }
        subst.insert(sym, repl);
    }

    let mut free: Vec<SymbolId> = lt
        .all_symbols()
        .into_iter()
        .chain(rt.all_symbols())
        .filter(|&s| s != ROOT_SYMBOL)
        .collect();
    free.sort();
    free.dedup();
    let matching: Vec<(u32, u32)> = matching.iter().map(|&(a, b)| (a as u32, b as u32)).collect();
    let mut forest = PairedForest {
        left: lt,
        right: rt,
        matching,
        substitution: subst,
        free_symbols: free,
    };
    forest.recanonicalize();
    Some(forest)
}

fn forest_bytes(f: &PairedForest) -> Vec<u8> {
    let mut b = f.left.canonical_bytes();
    b.extend(f.right.canonical_bytes());
    b
}

/// All relabelings of the free symbols by signed permutations, i.e. the
/// bijections of the summation lattice that preserve the class value.
fn signed_perms(free: &[SymbolId]) -> Vec<BTreeMap<SymbolId, (SymbolId, i32)>> {
    let s = free.len();
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut idx: Vec<usize> = (0..s).collect();
    permute(&mut idx, 0, &mut perms);
    let mut out = Vec::new();
    for p in &perms {
        for signs in 0..(1u32 << s) {
            let mut map = BTreeMap::new();
            for (i, &src) in free.iter().enumerate() {
                let sign = if signs & (1 << i) != 0 { -1 } else { 1 };
                map.insert(src, (1 + p[i] as SymbolId, sign));
            }
            out.push(map);
        }
    }
    out
}

fn permute(idx: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
    if at == idx.len() {
        out.push(idx.clone());
        return;
    }
    for i in at..idx.len() {
        idx.swap(at, i);
        permute(idx, at + 1, out);
        idx.swap(at, i);
    }
}

/// Canonical variant of a forest: the signed-permutation relabeling with the
/// lexicographically least encoding. Returns the relabeled forest and its
/// encoding.
fn canonical_variant(f: &PairedForest) -> (PairedForest, Vec<u8>) {
    let mut best: Option<(Vec<u8>, PairedForest)> = None;
    for map in signed_perms(&f.free_symbols) {
        let lt = f.left.rename_symbols_raw(&map);
        let rt = f.right.rename_symbols_raw(&map);
        let mut cand = f.clone();
        cand.left = lt;
        cand.right = rt;
        cand.recanonicalize();
        cand.free_symbols = (1..=f.free_symbols.len() as SymbolId).collect();
        cand.substitution = f
            .substitution
            .iter()
            .map(|(s, v)| {
                let mut nv = LinearFrequency::zero();
                for (sym, c) in v.terms() {
                    match map.get(&sym) {
                        Some(&(ns, sign)) => nv = nv.add(&LinearFrequency::symbol(ns).scaled(c * sign)),
                        None => nv = nv.add(&LinearFrequency::symbol(sym).scaled(c)),
                    }
                }
                (*s, nv)
            })
            .collect();
        let bytes = forest_bytes(&cand);
        if best.as_ref().map_or(true, |(b, _)| bytes < *b) {
            best = Some((bytes, cand));
        }
    }
    let (bytes, forest) = best.expect("at least the identity relabeling");
    (forest, bytes)
}

/// Census key of a matching: skeletons, canonical initial-data monomial, and
/// resonance-phase signature, minimised over symbol relabelings and (for
/// equal skeletons) the orientation swap.
fn census_key(spec: &DispersionSpec, f: &PairedForest, same_shape: bool) -> Vec<u8> {
    let mut variants = vec![f.clone()];
    if same_shape {
        variants.push(f.mirror());
    }
    let mut best: Option<Vec<u8>> = None;
    for v in &variants {
        for map in signed_perms(&v.free_symbols) {
            let lt = v.left.rename_symbols(&map);
            let rt = v.right.rename_symbols(&map);
            let relabeled = PairedForest {
                left: lt,
                right: rt,
                matching: v.matching.clone(),
                substitution: BTreeMap::new(),
                free_symbols: (1..=v.free_symbols.len() as SymbolId).collect(),
            };
            let mut key = relabeled.left.skeleton_bytes();
            key.extend(relabeled.right.skeleton_bytes());
            key.extend(vmonomial_bytes(&relabeled));
            for phase in relabeled.resonance_phases(spec) {
                key.push(match phase_kind(&phase) {
                    PhaseKind::Zero => 0,
                    PhaseKind::Squares => 1,
                    PhaseKind::Mixed => 2,
                });
            }
            if best.as_ref().map_or(true, |b| key < *b) {
                best = Some(key);
            }
        }
    }
    best.unwrap()
}

/// Canonical encoding of the initial-data monomial
/// `conj(Upsilon(left)) * Upsilon(right)` of a forest, with the real-data
/// normalisation applied to each factor.
fn vmonomial_bytes(f: &PairedForest) -> Vec<u8> {
    let mut factors: Vec<(LinearFrequency, bool)> = Vec::new();
    for leaf in f.left.leaves() {
        // outer conjugation of the left tree flips the factor
        let vf = crate::trees::VFactor {
            freq: leaf.freq.clone(),
            conj: !leaf.edge.conj,
        }
        .normalize_real();
        factors.push((vf.freq, vf.conj));
    }
    for leaf in f.right.leaves() {
        let vf = crate::trees::VFactor {
            freq: leaf.freq.clone(),
            conj: leaf.edge.conj,
        }
        .normalize_real();
        factors.push((vf.freq, vf.conj));
    }
    factors.sort();
    let mut out = Vec::new();
    for (freq, conj) in factors {
        out.push(conj as u8);
        out.extend(format!("{}", freq).into_bytes());
        out.push(b';');
    }
    out
}

/// JSON report of one class, for the CLI and golden tests.
#[derive(Serialize)]
pub struct ClassReport {
    pub id: usize,
    pub left: DecoratedTree,
    pub right: DecoratedTree,
    pub multiplicity: u32,
    pub free_symbols: Vec<SymbolId>,
    pub substitution: BTreeMap<String, String>,
    pub mirrored: bool,
}

pub fn class_reports(classes: &[PairingClass]) -> Vec<ClassReport> {
    classes
        .iter()
        .enumerate()
        .map(|(id, c)| ClassReport {
            id,
            left: c.representative.left.clone(),
            right: c.representative.right.clone(),
            multiplicity: c.multiplicity,
            free_symbols: c.representative.free_symbols.clone(),
            substitution: c
                .representative
                .substitution
                .iter()
                .map(|(s, v)| (format!("k{}", s), format!("{}", v)))
                .collect(),
            mirrored: c.mirrored,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_counts_are_double_factorials() {
        assert_eq!(wick_pairings(4).len(), 3);
        assert_eq!(wick_pairings(6).len(), 15);
        assert!(wick_pairings(3).is_empty());
    }

    #[test]
    fn duhamel_tree_shapes() {
        let nls = DispersionSpec::nls();
        assert_eq!(duhamel_trees(&nls, 0).len(), 2);
        assert_eq!(duhamel_trees(&nls, 1).len(), 4);
        let kdv = DispersionSpec::kdv();
        assert_eq!(duhamel_trees(&kdv, 0).len(), 2);
        assert_eq!(duhamel_trees(&kdv, 1).len(), 3);
        for t in duhamel_trees(&nls, 1).iter().chain(duhamel_trees(&kdv, 1).iter()) {
            assert!(kirchhoff_valid(t));
            assert_eq!(t.freq, LinearFrequency::symbol(ROOT_SYMBOL));
        }
    }

    #[test]
    fn nls_first_order_census() {
        let spec = DispersionSpec::nls();
        let classes = paired_forest_classes(&spec, 0, NoiseMode::RealGaussian);
        assert_eq!(classes.len(), 3);
        let mut ms: Vec<u32> = classes.iter().map(|c| c.multiplicity).collect();
        ms.sort();
        assert_eq!(ms, vec![1, 1, 2]);
    }

    #[test]
    fn nls_second_order_census_matches_published_table() {
        let spec = DispersionSpec::nls();
        let classes = paired_forest_classes(&spec, 1, NoiseMode::RealGaussian);
        assert_eq!(classes.len(), 17);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for c in &classes {
            *counts.entry(c.multiplicity).or_default() += 1;
        }
        // first order: m = 1, 1, 2; second order: 6 appears for three
        // classes, 2 for four, 1 for three, 4 for four
        assert_eq!(counts[&6], 3);
        assert_eq!(counts[&4], 4);
        assert_eq!(counts[&2], 5); // the four second-order classes plus m_{F_3} = 2
        assert_eq!(counts[&1], 5); // three second-order classes plus m = 1, 1
        let total: u32 = classes.iter().map(|c| c.multiplicity).sum();
        assert_eq!(total, 1 + 3 + 15 + 15 + 15);
    }

    #[test]
    fn kdv_censuses() {
        let spec = DispersionSpec::kdv();
        let c0 = paired_forest_classes(&spec, 0, NoiseMode::RealGaussian);
        assert_eq!(c0.len(), 1);
        assert_eq!(c0[0].multiplicity, 1);

        let c1 = paired_forest_classes(&spec, 1, NoiseMode::RealGaussian);
        assert_eq!(c1.len(), 4);
        let mut ms: Vec<u32> = c1.iter().map(|c| c.multiplicity).collect();
        ms.sort();
        assert_eq!(ms, vec![1, 1, 2, 2]);
    }

    #[test]
    fn census_sums_count_admissible_matchings() {
        for (spec, r, expect) in [
            (DispersionSpec::nls(), 0, 1 + 3),
            (DispersionSpec::kdv(), 1, 1 + 2 + 3),
        ] {
            let classes = paired_forest_classes(&spec, r, NoiseMode::RealGaussian);
            let total: u32 = classes.iter().map(|c| c.multiplicity).sum();
            assert_eq!(total, expect, "{} r={}", spec.name, r);
        }
    }

    #[test]
    fn complex_mode_drops_same_sign_pairings() {
        let spec = DispersionSpec::nls();
        let real = paired_forest_classes(&spec, 0, NoiseMode::RealGaussian);
        let filtered = complex_case_filter(real.clone(), NoiseMode::ComplexGaussian);
        // the class pairing the two plain leaves of the first iterate drops
        assert_eq!(filtered.len(), 2);
        let direct = paired_forest_classes(&spec, 0, NoiseMode::ComplexGaussian);
        assert_eq!(direct.len(), filtered.len());
        for (a, b) in direct.iter().zip(&filtered) {
            assert_eq!(a.multiplicity, b.multiplicity);
        }
        // real mode: the filter is the identity
        let id = complex_case_filter(real.clone(), NoiseMode::RealGaussian);
        assert_eq!(id.len(), real.len());
    }

    #[test]
    fn representatives_are_canonical_fixed_points() {
        let spec = DispersionSpec::nls();
        for class in paired_forest_classes(&spec, 1, NoiseMode::RealGaussian) {
            let mut l = class.representative.left.clone();
            let mut r = class.representative.right.clone();
            l.canonicalize();
            r.canonicalize();
            assert_eq!(l, class.representative.left);
            assert_eq!(r, class.representative.right);
            assert!(class.representative.root_condition());
            assert!(class.representative.leaf_condition());
        }
    }
}
