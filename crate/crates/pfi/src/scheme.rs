//! Assembly of the symbolic moment schemes from the pairing classes.
//!
//! The update formula for the second moment is the sum over paired-forest
//! classes of `m_F * conj(Upsilon(T1)) Upsilon(T2) / (S(T1) S(T2))` times the
//! truncated product of approximation characters. Both orientations of a
//! mirrored class enter explicitly, so the assembled expression is real
//! term by term; an assertion checks this rather than taking an ad-hoc real
//! part.
//!
//! The result is a [`SchemeExpression`]: a sum of terms
//! `tau^p * coeff(k, x_i) * prod |v_.|^2` with exact rational coefficients,
//! free summation symbols, and optional stabilisation filters. A closed-world
//! pattern catalogue renders it as a [`PhysicalScheme`], the FFT-executable
//! recipe; unmatched monomials fail loudly instead of falling back to a
//! Fourier-space sweep.

use crate::filters::FilterId;
use crate::forest::{paired_forest_classes, NoiseMode, PairedForest};
use crate::sympoly::{CPoly, CRat, SymPoly, SymbolId, TauPoly, ROOT_SYMBOL};
use crate::trees::{degree, upsilon, DecoratedTree, DispersionSpec, LinearFrequency, VFactor};
use num_complex::Complex64;
use num_rational::Rational64;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;

// ---------------------------------------------------------------------------
// Symbolic approximation character
// ---------------------------------------------------------------------------

/// A symbolic approximation value: polynomial in tau under a carrier
/// oscillation `e^{i tau carrier}`.
#[derive(Clone, Debug)]
pub struct SymApprox {
    pub carrier: SymPoly,
    pub poly: TauPoly,
}

impl SymApprox {
    fn zero() -> Self {
        Self {
            carrier: SymPoly::zero(),
            poly: TauPoly::zero(),
        }
    }
}

/// Symbolic full-Taylor approximation character at order `r` (d = 1).
pub fn sym_pi_nr(tree: &DecoratedTree, r: i32, spec: &DispersionSpec) -> SymApprox {
    if r + 1 < degree(tree, spec) as i32 {
        return SymApprox::zero();
    }
    let ell = tree.poly_exp as usize;
    if !spec.is_integrator(tree.edge.label) {
        let mut carrier = spec.edge_phase_sym(tree.edge, &tree.freq);
        let mut poly = TauPoly::monomial(ell, CPoly::from_scalar(CRat::one()));
        for c in &tree.children {
            let ca = sym_pi_nr(c, r - ell as i32, spec);
            carrier = carrier.add(&ca.carrier);
            poly = poly.mul(&ca.poly);
        }
        SymApprox { carrier, poly }
    } else {
        let mut child_carrier = SymPoly::zero();
        let mut child_poly = TauPoly::one();
        for c in &tree.children {
            let ca = sym_pi_nr(c, r - ell as i32 - 1, spec);
            child_carrier = child_carrier.add(&ca.carrier);
            child_poly = child_poly.mul(&ca.poly);
        }
        // multiply by xi^ell
        let mut shifted = vec![CPoly::zero(); ell];
        shifted.extend(child_poly.coeffs);
        let child_poly = TauPoly { coeffs: shifted };

        let total_phase = spec
            .edge_phase_sym(tree.edge, &tree.freq)
            .add(&child_carrier);
        let pref = spec.integrator_prefactor_sym(tree.edge.conj, &tree.freq);
        let mut out = TauPoly::zero();
        for (q, cq) in child_poly.coeffs.iter().enumerate() {
            if cq.is_zero() || q as i32 > r {
                continue;
            }
            for l in 0..=(r as usize - q) {
                let denom = factorial(l as u64) as i64 * (l + q + 1) as i64;
                let coeff = CPoly::i_times_pow(&total_phase, l as u32)
                    .scale(&CRat::from_ratio(1, denom));
                out = out.add(&TauPoly::monomial(
                    l + q + 1,
                    cq.mul(&coeff).mul(&pref),
                ));
            }
        }
        SymApprox {
            carrier: SymPoly::zero(),
            poly: out,
        }
    }
}

fn factorial(n: u64) -> u64 {
    (1..=n).product::<u64>().max(1)
}

#[derive(Debug, Clone)]
pub enum AssembleError {
    /// A paired product retained an uncancelled carrier oscillation.
    PairingViolation(String),
    /// The assembled expression failed the realness assertion.
    NotReal(String),
    /// A term has no FFT-implementable pattern in the catalogue.
    UnmatchedTerm(String),
    UnsupportedOrder(i32),
}

impl fmt::Display for AssembleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssembleError::PairingViolation(s) => write!(f, "pairing violation: residual carrier {}", s),
            AssembleError::NotReal(s) => write!(f, "assembled expression is not real: {}", s),
            AssembleError::UnmatchedTerm(s) => write!(f, "no physical-space pattern for term {}", s),
            AssembleError::UnsupportedOrder(r) => write!(f, "unsupported truncation order {}", r),
        }
    }
}

impl std::error::Error for AssembleError {}

/// `Q_{<= r+1}(conj(Pi^{n,r} T1) Pi^{n,r} T2)` as a tau polynomial; the root
/// condition guarantees the carriers cancel.
pub fn paired_truncation(
    left: &DecoratedTree,
    right: &DecoratedTree,
    r: i32,
    spec: &DispersionSpec,
) -> Result<TauPoly, AssembleError> {
    let la = sym_pi_nr(left, r, spec);
    let ra = sym_pi_nr(right, r, spec);
    let residual = ra.carrier.sub(&la.carrier);
    if !residual.is_zero() {
        return Err(AssembleError::PairingViolation(format!("{}", residual)));
    }
    Ok(la.poly.conj().mul(&ra.poly).truncate((r + 1) as usize))
}

// ---------------------------------------------------------------------------
// Scheme expressions
// ---------------------------------------------------------------------------

/// Stabilisation filter attached to a term.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct FilterUse {
    pub id: FilterId,
    pub arg: FilterArg,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum FilterArg {
    /// Filter in the output frequency `k`.
    K,
    /// Filter in a summation symbol.
    Symbol(SymbolId),
    /// Two-frequency filter in `(k, symbol)`.
    KAndSymbol(SymbolId),
}

/// One additive term of a scheme: `tau^p * coeff * prod factors`, summed over
/// the free symbols of the factors and coefficient.
#[derive(Clone, Debug)]
pub struct SchemeTerm {
    pub tau_power: u32,
    pub factors: Vec<VFactor>,
    pub coeff: CPoly,
    pub filters: Vec<FilterUse>,
}

impl SchemeTerm {
    pub fn free_symbols(&self) -> Vec<SymbolId> {
        let mut set = std::collections::BTreeSet::new();
        for f in &self.factors {
            set.extend(f.freq.symbols());
        }
        for m in self.coeff.re.terms.keys().chain(self.coeff.im.terms.keys()) {
            for &(s, _) in &m.0 {
                set.insert(s);
            }
        }
        set.remove(&ROOT_SYMBOL);
        set.into_iter().collect()
    }

    fn factors_encoding(&self) -> String {
        self.factors
            .iter()
            .map(|f| format!("{}", f))
            .collect::<Vec<_>>()
            .join("*")
    }

    fn coeff_encoding(&self) -> String {
        format!("{}|{}", self.coeff.re, self.coeff.im)
    }

    /// Canonical relabeling of the free symbols: the signed permutation with
    /// the lexicographically least (factors, coefficient) encoding.
    pub fn normalized(&self) -> SchemeTerm {
        let free = self.free_symbols();
        let mut best: Option<(String, String, SchemeTerm)> = None;
        for map in signed_perms(&free) {
            let mut t = self.clone();
            t.factors = self
                .factors
                .iter()
                .map(|f| {
                    let mut nf = LinearFrequency::zero();
                    for (s, c) in f.freq.terms() {
                        match map.get(&s) {
                            Some(&(ns, sign)) => {
                                nf = nf.add(&LinearFrequency::symbol(ns).scaled(c * sign))
                            }
                            None => nf = nf.add(&LinearFrequency::symbol(s).scaled(c)),
                        }
                    }
                    VFactor { freq: nf, conj: f.conj }.normalize_real()
                })
                .collect();
            t.factors.sort();
            let rename = |s: SymbolId| map.get(&s).map(|&(ns, _)| ns).unwrap_or(s);
            // sign flips act on polynomials through odd powers
            t.coeff = rename_cpoly(&self.coeff, &map);
            t.filters = self
                .filters
                .iter()
                .map(|f| FilterUse {
                    id: f.id,
                    arg: match f.arg {
                        FilterArg::K => FilterArg::K,
                        FilterArg::Symbol(s) => FilterArg::Symbol(rename(s)),
                        FilterArg::KAndSymbol(s) => FilterArg::KAndSymbol(rename(s)),
                    },
                })
                .collect();
            t.filters.sort_by_key(|f| format!("{:?}", f));
            let fe = t.factors_encoding();
            let ce = t.coeff_encoding();
            let better = match &best {
                None => true,
                Some((bf, bc, _)) => (&fe, &ce) < (&(bf.clone()), &(bc.clone())),
            };
            if better {
                best = Some((fe, ce, t));
            }
        }
        best.map(|(_, _, t)| t).unwrap_or_else(|| self.clone())
    }
}

fn rename_cpoly(p: &CPoly, map: &BTreeMap<SymbolId, (SymbolId, i32)>) -> CPoly {
    let rename_poly = |q: &SymPoly| -> SymPoly {
        let mut out = SymPoly::zero();
        for (m, c) in &q.terms {
            let mut coeff = *c;
            let mut mono = crate::sympoly::Monomial::unit();
            for &(s, e) in &m.0 {
                let (ns, sign) = map.get(&s).copied().unwrap_or((s, 1));
                if sign < 0 && e % 2 == 1 {
                    coeff = -coeff;
                }
                mono = mono.mul(&pow_monomial(ns, e));
            }
            out.add_term(mono, coeff);
        }
        out
    };
    CPoly {
        re: rename_poly(&p.re),
        im: rename_poly(&p.im),
    }
}

fn pow_monomial(s: SymbolId, e: u8) -> crate::sympoly::Monomial {
    let mut m = crate::sympoly::Monomial::unit();
    for _ in 0..e {
        m = m.mul(&crate::sympoly::Monomial::symbol(s));
    }
    m
}

fn signed_perms(free: &[SymbolId]) -> Vec<BTreeMap<SymbolId, (SymbolId, i32)>> {
    let s = free.len();
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut idx: Vec<usize> = (0..s).collect();
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
    if out.is_empty() {
        out.push(BTreeMap::new());
    }
    out
}

/// Symbolic Fourier-space formula for the moment update `V_k(tau, v)`.
#[derive(Clone, Debug)]
pub struct SchemeExpression {
    pub equation: String,
    pub order: i32,
    pub regularity: u32,
    pub terms: Vec<SchemeTerm>,
}

impl SchemeExpression {
    fn push(&mut self, term: SchemeTerm) {
        if term.coeff.is_zero() {
            return;
        }
        let term = term.normalized();
        let key = (
            term.tau_power,
            term.factors_encoding(),
            format!("{:?}", term.filters),
        );
        for t in &mut self.terms {
            if (t.tau_power, t.factors_encoding(), format!("{:?}", t.filters)) == key {
                t.coeff = t.coeff.add(&term.coeff);
                return;
            }
        }
        self.terms.push(term);
    }

    fn prune(&mut self) {
        self.terms.retain(|t| !t.coeff.is_zero());
        self.terms
            .sort_by_key(|t| (t.tau_power, t.factors_encoding()));
    }

    /// Maximum tau power present.
    pub fn max_tau_power(&self) -> u32 {
        self.terms.iter().map(|t| t.tau_power).max().unwrap_or(0)
    }

    /// Evaluate on a concrete field in Fourier space: factors read
    /// coefficients of `values`, free symbols are summed over `modes`.
    pub fn eval_field(
        &self,
        values: &dyn Fn(i64) -> Complex64,
        k: i64,
        modes: &[i64],
        tau: f64,
    ) -> Complex64 {
        let mut acc = Complex64::default();
        for t in &self.terms {
            let free = t.free_symbols();
            let tp = tau.powi(t.tau_power as i32);
            let mut assign: BTreeMap<SymbolId, i64> = BTreeMap::new();
            assign.insert(ROOT_SYMBOL, k);
            let mut sum = Complex64::default();
            sum_over(&free, modes, &mut assign, &mut |a| {
                let lookup = |s: SymbolId| *a.get(&s).unwrap() as f64;
                let mut v = t.coeff.eval_f64(&lookup);
                for f in &t.factors {
                    let kv = f.freq.eval(&|s| vec![*a.get(&s).unwrap()], 1)[0];
                    let u = values(kv);
                    v *= if f.conj { u.conj() } else { u };
                }
                for fu in &t.filters {
                    v *= match fu.arg {
                        FilterArg::K => fu.id.eval(tau, k as f64),
                        FilterArg::Symbol(s) => fu.id.eval(tau, *a.get(&s).unwrap() as f64),
                        FilterArg::KAndSymbol(s) => {
                            fu.id.eval2(tau, k as f64, *a.get(&s).unwrap() as f64)
                        }
                    };
                }
                sum += v;
            });
            acc += sum * tp;
        }
        acc
    }

    /// Evaluate on a real even profile, returning the real value.
    pub fn eval_profile(
        &self,
        profile: &dyn Fn(i64) -> f64,
        k: i64,
        kmax: i64,
        tau: f64,
    ) -> f64 {
        let modes: Vec<i64> = (-kmax..=kmax).collect();
        let v = self.eval_field(&|a| Complex64::new(profile(a), 0.0), k, &modes, tau);
        v.re
    }
}

fn sum_over(
    free: &[SymbolId],
    modes: &[i64],
    assign: &mut BTreeMap<SymbolId, i64>,
    f: &mut dyn FnMut(&BTreeMap<SymbolId, i64>),
) {
    match free.split_first() {
        None => f(assign),
        Some((&s, rest)) => {
            for &m in modes {
                assign.insert(s, m);
                sum_over(rest, modes, assign, f);
            }
            assign.remove(&s);
        }
    }
}

impl fmt::Display for SchemeExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "V_k[{} r={} n={}](tau, v) =",
            self.equation, self.order, self.regularity
        )?;
        for t in &self.terms {
            let free = t.free_symbols();
            let sum = if free.is_empty() {
                String::new()
            } else {
                format!(
                    "sum_{{{}}} ",
                    free.iter()
                        .map(|s| format!("k{}", s))
                        .collect::<Vec<_>>()
                        .join(",")
                )
            };
            let filters = t
                .filters
                .iter()
                .map(|fu| match fu.arg {
                    FilterArg::K => format!(" * {:?}(k)", fu.id),
                    FilterArg::Symbol(s) => format!(" * {:?}(k{})", fu.id, s),
                    FilterArg::KAndSymbol(s) => format!(" * {:?}(k,k{})", fu.id, s),
                })
                .collect::<String>();
            writeln!(
                f,
                "  + tau^{} * {}[{} | {}i] * {}{}",
                t.tau_power,
                sum,
                t.coeff.re,
                t.coeff.im,
                t.factors_encoding(),
                filters
            )?;
        }
        Ok(())
    }
}

/// Serializable report of a scheme expression.
#[derive(Serialize)]
pub struct SchemeReport {
    pub equation: String,
    pub order: i32,
    pub regularity: u32,
    pub terms: Vec<SchemeTermReport>,
}

#[derive(Serialize)]
pub struct SchemeTermReport {
    pub tau_power: u32,
    pub coeff_re: String,
    pub coeff_im: String,
    pub factors: Vec<String>,
    pub free_symbols: Vec<SymbolId>,
    pub filters: Vec<FilterUse>,
}

impl SchemeExpression {
    pub fn report(&self) -> SchemeReport {
        SchemeReport {
            equation: self.equation.clone(),
            order: self.order,
            regularity: self.regularity,
            terms: self
                .terms
                .iter()
                .map(|t| SchemeTermReport {
                    tau_power: t.tau_power,
                    coeff_re: format!("{}", t.coeff.re),
                    coeff_im: format!("{}", t.coeff.im),
                    factors: t.factors.iter().map(|f| format!("{}", f)).collect(),
                    free_symbols: t.free_symbols(),
                    filters: t.filters.clone(),
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

fn member_factors(forest: &PairedForest) -> Vec<VFactor> {
    let mut out = Vec::new();
    for leaf in forest.left.leaves() {
        out.push(
            VFactor {
                freq: leaf.freq.clone(),
                conj: !leaf.edge.conj,
            }
            .normalize_real(),
        );
    }
    for leaf in forest.right.leaves() {
        out.push(
            VFactor {
                freq: leaf.freq.clone(),
                conj: leaf.edge.conj,
            }
            .normalize_real(),
        );
    }
    out.sort();
    out
}

/// Assemble the order-`r` moment scheme for the equation, with the stated
/// a-priori regularity recorded on the expression.
pub fn assemble_scheme(
    spec: &DispersionSpec,
    r: i32,
    n: u32,
) -> Result<SchemeExpression, AssembleError> {
    if !(0..=1).contains(&r) {
        return Err(AssembleError::UnsupportedOrder(r));
    }
    let classes = paired_forest_classes(spec, r, NoiseMode::RealGaussian);
    let mut expr = SchemeExpression {
        equation: spec.name.clone(),
        order: r,
        regularity: n,
        terms: vec![],
    };
    for class in &classes {
        for member in &class.members {
            let mut orientations = vec![member.clone()];
            if class.mirrored {
                orientations.push(member.mirror());
            }
            for forest in orientations {
                let ul = upsilon(&forest.left, spec).expect("grammar trees");
                let ur = upsilon(&forest.right, spec).expect("grammar trees");
                let s = crate::trees::symmetry_factor(&forest.left)
                    * crate::trees::symmetry_factor(&forest.right);
                let scalar = ul
                    .scalar
                    .conj()
                    .mul(&ur.scalar)
                    .scale(Rational64::new(1, s as i64));
                let q = paired_truncation(&forest.left, &forest.right, r, spec)?;
                let factors = member_factors(&forest);
                for (p, c) in q.coeffs.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    expr.push(SchemeTerm {
                        tau_power: p as u32,
                        factors: factors.clone(),
                        coeff: c.scale(&scalar),
                        filters: vec![],
                    });
                }
            }
        }
    }
    expr.prune();
    for t in &expr.terms {
        if !t.coeff.im.is_zero() {
            return Err(AssembleError::NotReal(format!("{}", t.coeff.im)));
        }
    }
    Ok(expr)
}

/// Attach the stabilisation filters of the named scheme to its critical
/// derivative-bearing terms.
pub fn stabilize(expr: &SchemeExpression, id: SchemeId) -> SchemeExpression {
    let mut out = SchemeExpression {
        equation: expr.equation.clone(),
        order: expr.order,
        regularity: expr.regularity,
        terms: vec![],
    };
    for t in &expr.terms {
        if t.tau_power == 0 || t.coeff.re.degree() == 0 {
            out.terms.push(t.clone());
            continue;
        }
        // split the coefficient into monomials and filter each by its
        // derivative content
        for (m, c) in &t.coeff.re.terms {
            let mut nt = t.clone();
            nt.coeff = CPoly::from_real({
                let mut p = SymPoly::zero();
                p.add_term(m.clone(), *c);
                p
            });
            let k_deg = m
                .0
                .iter()
                .find(|&&(s, _)| s == ROOT_SYMBOL)
                .map(|&(_, e)| e)
                .unwrap_or(0);
            let sym_degs: Vec<(SymbolId, u8)> = m
                .0
                .iter()
                .filter(|&&(s, _)| s != ROOT_SYMBOL)
                .map(|&(s, e)| (s, e))
                .collect();
            nt.filters = match id {
                SchemeId::Nls2Stab => {
                    if k_deg >= 2 {
                        vec![FilterUse { id: FilterId::Psi, arg: FilterArg::K }]
                    } else if let Some(&(s, e)) = sym_degs.first() {
                        if e >= 2 {
                            vec![FilterUse { id: FilterId::Psi, arg: FilterArg::Symbol(s) }]
                        } else {
                            vec![]
                        }
                    } else {
                        vec![]
                    }
                }
                SchemeId::Kdv2Stab => {
                    let conv = is_convolution_pattern(&nt.factors);
                    if conv.is_some() && k_deg >= 2 {
                        vec![FilterUse { id: FilterId::Psi1, arg: FilterArg::K }]
                    } else if k_deg >= 2 {
                        vec![FilterUse { id: FilterId::Psi3, arg: FilterArg::K }]
                    } else if k_deg == 1 {
                        match sym_degs.first() {
                            Some(&(s, _)) => vec![FilterUse {
                                id: FilterId::Psi2,
                                arg: FilterArg::KAndSymbol(s),
                            }],
                            None => vec![],
                        }
                    } else {
                        vec![]
                    }
                }
                _ => vec![],
            };
            out.push(nt);
        }
    }
    out.prune();
    out
}

// ---------------------------------------------------------------------------
// Physical-space rendering
// ---------------------------------------------------------------------------

/// Precomputed spectral scalar, refreshed each step.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum SpectralScalar {
    /// `sum_a a^weight |u_a|^2`; weight 0 is the squared L2 norm.
    WeightedMass {
        weight: u32,
        filter: Option<FilterId>,
    },
}

/// Fourier multiplier applied to a moment field.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum BaseOp {
    /// `k^deriv * |u_k|^2`: derivatives of the spatial convolution `u * u~`.
    Moment { deriv: u32, filter: Option<FilterId> },
    /// `k^deriv * [(u * u~)^pow]_k`: pointwise powers of the moment field,
    /// computed by padded coefficient convolution.
    MomentPower {
        pow: u32,
        deriv: u32,
        filter: Option<FilterId>,
    },
}

/// One executable term of the physical-space recipe.
#[derive(Clone, Debug, Serialize)]
pub struct PhysicalTerm {
    pub tau_power: u32,
    pub coeff_re: Rational64,
    pub coeff_im: Rational64,
    pub base: BaseOp,
    pub scalars: Vec<SpectralScalar>,
    /// Two-frequency filter pairing the output mode with the scalar's
    /// summation mode.
    pub pair_filter: Option<FilterId>,
}

/// FFT-executable recipe whose k-th Fourier coefficient reproduces the
/// scheme expression term by term.
#[derive(Clone, Debug, Serialize)]
pub struct PhysicalScheme {
    pub equation: String,
    pub order: i32,
    pub terms: Vec<PhysicalTerm>,
}

/// If the absolute-square factors form a convolution pattern
/// `sum eps_i f_i = k` with one fewer free symbol than factors, return the
/// signs.
fn is_convolution_pattern(factors: &[VFactor]) -> Option<Vec<i32>> {
    let pairs = abs2_pairs(factors)?;
    let mut free = std::collections::BTreeSet::new();
    for f in &pairs {
        free.extend(f.symbols().filter(|&s| s != ROOT_SYMBOL));
    }
    if free.len() + 1 != pairs.len() {
        return None;
    }
    let m = pairs.len();
    let target = LinearFrequency::symbol(ROOT_SYMBOL);
    for mask in 0..(1u32 << m) {
        let mut acc = LinearFrequency::zero();
        let mut signs = Vec::with_capacity(m);
        for (i, f) in pairs.iter().enumerate() {
            let sign = if mask & (1 << i) != 0 { -1 } else { 1 };
            signs.push(sign);
            acc = acc.add(&f.scaled(sign));
        }
        if acc == target {
            return Some(signs);
        }
    }
    None
}

/// Group the factors into conjugate pairs `v_f conj(v_f)`, returning the pair
/// frequencies. Fails when a factor is unpaired.
fn abs2_pairs(factors: &[VFactor]) -> Option<Vec<LinearFrequency>> {
    let mut counts: BTreeMap<(LinearFrequency, bool), i32> = BTreeMap::new();
    for f in factors {
        *counts.entry((f.freq.clone(), f.conj)).or_default() += 1;
    }
    let mut out = Vec::new();
    let keys: Vec<(LinearFrequency, bool)> = counts.keys().cloned().collect();
    for key in keys {
        if key.1 {
            continue;
        }
        let plain = counts.get(&key).copied().unwrap_or(0);
        let conj = counts.get(&(key.0.clone(), true)).copied().unwrap_or(0);
        if plain != conj {
            return None;
        }
        for _ in 0..plain {
            out.push(key.0.clone());
        }
        counts.remove(&key);
        counts.remove(&(key.0.clone(), true));
    }
    if counts.values().any(|&c| c != 0) {
        return None;
    }
    out.sort();
    Some(out)
}

/// Render a scheme expression as the physical-space recipe.
///
/// The catalogue is closed-world: `|v_k|^2` maps to the spatial convolution
/// `u * u~`, `k^2 |v_k|^2` to its second derivative, plain sums to L2-type
/// scalars, and convolution-constrained products to pointwise powers of
/// `u * u~`. Terms outside the catalogue are reported, not silently swept.
pub fn to_physical(expr: &SchemeExpression) -> Result<PhysicalScheme, AssembleError> {
    let mut out = PhysicalScheme {
        equation: expr.equation.clone(),
        order: expr.order,
        terms: vec![],
    };
    for t in &expr.terms {
        let pairs = abs2_pairs(&t.factors)
            .ok_or_else(|| AssembleError::UnmatchedTerm(t.factors_encoding()))?;
        if !t.coeff.im.is_zero() {
            return Err(AssembleError::UnmatchedTerm(t.factors_encoding()));
        }
        // separable pattern: the output factor |v_k|^2 with independent
        // single-symbol sums
        let separable = pairs.iter().any(|f| *f == LinearFrequency::symbol(ROOT_SYMBOL))
            && pairs.iter().all(|f| {
                f.symbols().count() == 1 && f.terms().all(|(_, c)| c.abs() == 1)
            });
        if separable {
            for (m, c) in &t.coeff.re.terms {
                let mut k_deg = 0u32;
                let mut sym_deg: BTreeMap<SymbolId, u32> = BTreeMap::new();
                for &(s, e) in &m.0 {
                    if s == ROOT_SYMBOL {
                        k_deg = e as u32;
                    } else {
                        sym_deg.insert(s, e as u32);
                    }
                }
                let mut base_filter = None;
                let mut pair_filter = None;
                let mut scalar_filters: BTreeMap<SymbolId, FilterId> = BTreeMap::new();
                for fu in &t.filters {
                    match fu.arg {
                        FilterArg::K => base_filter = Some(fu.id),
                        FilterArg::Symbol(s) => {
                            scalar_filters.insert(s, fu.id);
                        }
                        FilterArg::KAndSymbol(s) => {
                            pair_filter = Some(fu.id);
                            scalar_filters.insert(s, fu.id);
                        }
                    }
                }
                let mut scalars = Vec::new();
                for f in &pairs {
                    let syms: Vec<SymbolId> = f.symbols().collect();
                    if syms == [ROOT_SYMBOL] {
                        continue;
                    }
                    let s = syms[0];
                    scalars.push(SpectralScalar::WeightedMass {
                        weight: sym_deg.get(&s).copied().unwrap_or(0),
                        filter: scalar_filters.get(&s).copied(),
                    });
                }
                // every coefficient symbol must be carried by some factor
                let carried: std::collections::BTreeSet<SymbolId> = pairs
                    .iter()
                    .flat_map(|f| f.symbols())
                    .filter(|&s| s != ROOT_SYMBOL)
                    .collect();
                if sym_deg.keys().any(|s| !carried.contains(s)) {
                    return Err(AssembleError::UnmatchedTerm(t.factors_encoding()));
                }
                out.terms.push(PhysicalTerm {
                    tau_power: t.tau_power,
                    coeff_re: *c,
                    coeff_im: Rational64::from_integer(0),
                    base: BaseOp::Moment {
                        deriv: k_deg,
                        filter: base_filter,
                    },
                    scalars,
                    pair_filter,
                });
            }
            continue;
        }
        // convolution pattern: powers of the moment field
        if is_convolution_pattern(&t.factors).is_some() {
            let only_k = t
                .coeff
                .re
                .terms
                .keys()
                .all(|m| m.0.iter().all(|&(s, _)| s == ROOT_SYMBOL));
            if !only_k {
                return Err(AssembleError::UnmatchedTerm(t.factors_encoding()));
            }
            for (m, c) in &t.coeff.re.terms {
                let k_deg = m.0.first().map(|&(_, e)| e as u32).unwrap_or(0);
                let base_filter = t.filters.iter().find_map(|fu| match fu.arg {
                    FilterArg::K => Some(fu.id),
                    _ => None,
                });
                out.terms.push(PhysicalTerm {
                    tau_power: t.tau_power,
                    coeff_re: *c,
                    coeff_im: Rational64::from_integer(0),
                    base: BaseOp::MomentPower {
                        pow: pairs.len() as u32,
                        deriv: k_deg,
                        filter: base_filter,
                    },
                    scalars: vec![],
                    pair_filter: None,
                });
            }
            continue;
        }
        return Err(AssembleError::UnmatchedTerm(t.factors_encoding()));
    }
    out.terms.sort_by_key(|t| (t.tau_power, format!("{:?}", t.base)));
    Ok(out)
}

impl fmt::Display for PhysicalScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "u^(l+1) [{} order {}] =", self.equation, self.order)?;
        for t in &self.terms {
            let base = match &t.base {
                BaseOp::Moment { deriv: 0, filter } => match filter {
                    None => "(u*u~)".to_string(),
                    Some(ff) => format!("{:?}[k]·(u*u~)", ff),
                },
                BaseOp::Moment { deriv, filter } => {
                    let d = format!("D^{}(u*u~)", deriv);
                    match filter {
                        None => d,
                        Some(ff) => format!("{:?}[k]·{}", ff, d),
                    }
                }
                BaseOp::MomentPower { pow, deriv, filter } => {
                    let mut s = format!("(u*u~)^{}", pow);
                    if *deriv > 0 {
                        s = format!("D^{}({})", deriv, s);
                    }
                    if let Some(ff) = filter {
                        s = format!("{:?}[k]·{}", ff, s);
                    }
                    s
                }
            };
            let scalars = t
                .scalars
                .iter()
                .map(|s| match s {
                    SpectralScalar::WeightedMass { weight: 0, filter: None } => {
                        " · |u|_L2^2".to_string()
                    }
                    SpectralScalar::WeightedMass { weight, filter: None } => {
                        format!(" · sum_a a^{}|u_a|^2", weight)
                    }
                    SpectralScalar::WeightedMass { weight, filter: Some(ff) } => {
                        format!(" · sum_a {:?}[a]·a^{}|u_a|^2", ff, weight)
                    }
                })
                .collect::<String>();
            let coeff = if t.coeff_im == Rational64::from_integer(0) {
                format!("{}", t.coeff_re)
            } else {
                format!("{}+{}i", t.coeff_re, t.coeff_im)
            };
            let pair = match t.pair_filter {
                Some(ff) => format!(" · {:?}[k-side]", ff),
                None => String::new(),
            };
            writeln!(
                f,
                "  + tau^{} * ({}) * {}{}{}",
                t.tau_power, coeff, base, scalars, pair
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Named schemes
// ---------------------------------------------------------------------------

/// The concrete steppers exposed by the solver and the CLI.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SchemeId {
    Nls1,
    Nls2,
    Nls2Stab,
    Kdv1,
    Kdv2,
    Kdv2Stab,
}

impl SchemeId {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nls1" => Some(Self::Nls1),
            "nls2" => Some(Self::Nls2),
            "nls2_stab" => Some(Self::Nls2Stab),
            "kdv1" => Some(Self::Kdv1),
            "kdv2" => Some(Self::Kdv2),
            "kdv2_stab" => Some(Self::Kdv2Stab),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Nls1 => "nls1",
            Self::Nls2 => "nls2",
            Self::Nls2Stab => "nls2_stab",
            Self::Kdv1 => "kdv1",
            Self::Kdv2 => "kdv2",
            Self::Kdv2Stab => "kdv2_stab",
        }
    }

    pub fn dispersion(&self) -> DispersionSpec {
        match self {
            Self::Nls1 | Self::Nls2 | Self::Nls2Stab => DispersionSpec::nls(),
            _ => DispersionSpec::kdv(),
        }
    }

    pub fn order(&self) -> i32 {
        match self {
            Self::Nls1 | Self::Kdv1 => 0,
            _ => 1,
        }
    }

    pub fn regularity(&self) -> u32 {
        match self {
            Self::Nls1 | Self::Kdv1 => 1,
            _ => 2,
        }
    }

    pub fn stabilized(&self) -> bool {
        matches!(self, Self::Nls2Stab | Self::Kdv2Stab)
    }

    /// Assemble (and, for the stabilised variants, filter) the expression.
    pub fn expression(&self) -> Result<SchemeExpression, AssembleError> {
        let spec = self.dispersion();
        let expr = assemble_scheme(&spec, self.order(), self.regularity())?;
        Ok(if self.stabilized() {
            stabilize(&expr, *self)
        } else {
            expr
        })
    }

    pub fn physical(&self) -> Result<PhysicalScheme, AssembleError> {
        to_physical(&self.expression()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sympoly::Monomial;

    fn k_abs2() -> Vec<VFactor> {
        let k = LinearFrequency::symbol(ROOT_SYMBOL);
        vec![
            VFactor { freq: k.clone(), conj: false },
            VFactor { freq: k, conj: true },
        ]
    }

    fn abs2(freq: LinearFrequency) -> Vec<VFactor> {
        vec![
            VFactor { freq: freq.clone(), conj: false },
            VFactor { freq, conj: true },
        ]
    }

    fn poly_of(terms: &[(&[(SymbolId, u8)], i64, i64)]) -> CPoly {
        let mut re = SymPoly::zero();
        for &(mono, num, den) in terms {
            let mut m = Monomial::unit();
            for &(s, e) in mono {
                m = m.mul(&pow_monomial(s, e));
            }
            re.add_term(m, Rational64::new(num, den));
        }
        CPoly::from_real(re)
    }

    fn expected_term(
        tau_power: u32,
        factors: Vec<VFactor>,
        coeff: CPoly,
    ) -> SchemeTerm {
        SchemeTerm {
            tau_power,
            factors,
            coeff,
            filters: vec![],
        }
        .normalized()
    }

    fn assert_expr_equals(expr: &SchemeExpression, mut expected: Vec<SchemeTerm>) {
        expected.sort_by_key(|t| (t.tau_power, t.factors_encoding()));
        assert_eq!(
            expr.terms.len(),
            expected.len(),
            "term count mismatch:\n{}",
            expr
        );
        for (got, want) in expr.terms.iter().zip(&expected) {
            assert_eq!(got.tau_power, want.tau_power, "{}", expr);
            assert_eq!(got.factors, want.factors, "{}", expr);
            assert_eq!(got.coeff, want.coeff, "factors {}:\n{}", got.factors_encoding(), expr);
        }
    }

    #[test]
    fn first_order_schemes_are_the_plain_moment() {
        for spec in [DispersionSpec::nls(), DispersionSpec::kdv()] {
            let expr = assemble_scheme(&spec, 0, 1).unwrap();
            let expected = vec![expected_term(
                0,
                k_abs2(),
                CPoly::from_scalar(CRat::one()),
            )];
            assert_expr_equals(&expr, expected);
        }
    }

    #[test]
    fn nls_second_order_scheme_regression() {
        let expr = assemble_scheme(&DispersionSpec::nls(), 1, 2).unwrap();
        let x = 1 as SymbolId;
        let y = 2 as SymbolId;
        let mut f_kx = k_abs2();
        f_kx.extend(abs2(LinearFrequency::symbol(x)));
        f_kx.sort();
        let mut f_kxy = k_abs2();
        f_kxy.extend(abs2(LinearFrequency::symbol(x)));
        f_kxy.extend(abs2(LinearFrequency::symbol(y)));
        f_kxy.sort();
        // constrained triple |v_x|^2 |v_y|^2 |v_{k+x-y}|^2
        let conv = LinearFrequency::from_terms(&[(ROOT_SYMBOL, 1), (x, 1), (y, -1)]);
        let mut f_conv = abs2(LinearFrequency::symbol(x));
        f_conv.extend(abs2(LinearFrequency::symbol(y)));
        f_conv.extend(abs2(conv));
        f_conv.sort();

        let expected = vec![
            expected_term(0, k_abs2(), CPoly::from_scalar(CRat::one())),
            // 2 tau^2 |v_k|^2 (k^2 - x^2) |v_x|^2
            expected_term(
                2,
                f_kx,
                poly_of(&[(&[(ROOT_SYMBOL, 2)], 2, 1), (&[(x, 2)], -2, 1)]),
            ),
            // -6 tau^2 |v_k|^2 |v_x|^2 |v_y|^2
            expected_term(2, f_kxy, poly_of(&[(&[], -6, 1)])),
            // +6 tau^2 constrained convolution
            expected_term(2, f_conv, poly_of(&[(&[], 6, 1)])),
        ];
        assert_expr_equals(&expr, expected);
    }

    #[test]
    fn kdv_second_order_scheme_regression() {
        let expr = assemble_scheme(&DispersionSpec::kdv(), 1, 2).unwrap();
        let x = 1 as SymbolId;
        let mut f_kx = k_abs2();
        f_kx.extend(abs2(LinearFrequency::symbol(x)));
        f_kx.sort();
        let kmx = LinearFrequency::from_terms(&[(ROOT_SYMBOL, 1), (x, -1)]);
        let mut f_conv = abs2(LinearFrequency::symbol(x));
        f_conv.extend(abs2(kmx));
        f_conv.sort();
        let expected = vec![
            expected_term(0, k_abs2(), CPoly::from_scalar(CRat::one())),
            // (tau^2 k^2 / 2) sum_x |v_x|^2 |v_{k-x}|^2
            expected_term(2, f_conv, poly_of(&[(&[(ROOT_SYMBOL, 2)], 1, 2)])),
            // - tau^2 (k^2 + k x) |v_k|^2 |v_x|^2
            expected_term(
                2,
                f_kx,
                poly_of(&[
                    (&[(ROOT_SYMBOL, 2)], -1, 1),
                    (&[(ROOT_SYMBOL, 1), (x, 1)], -1, 1),
                ]),
            ),
        ];
        assert_expr_equals(&expr, expected);
    }

    #[test]
    fn schemes_have_even_tau_powers_only() {
        for (spec, r) in [
            (DispersionSpec::nls(), 0),
            (DispersionSpec::nls(), 1),
            (DispersionSpec::kdv(), 0),
            (DispersionSpec::kdv(), 1),
        ] {
            let expr = assemble_scheme(&spec, r, 2).unwrap();
            for t in &expr.terms {
                assert_eq!(t.tau_power % 2, 0, "{} r={}: {}", spec.name, r, expr);
            }
        }
    }

    #[test]
    fn physical_rendering_of_the_published_patterns() {
        // nls1: single convolution term
        let p = SchemeId::Nls1.physical().unwrap();
        assert_eq!(p.terms.len(), 1);
        assert!(matches!(p.terms[0].base, BaseOp::Moment { deriv: 0, .. }));

        // nls2: base moment, two derivative/mass terms, the quartic-mass
        // term, and the cubic convolution power
        let p2 = SchemeId::Nls2.physical().unwrap();
        assert_eq!(p2.terms.len(), 5);
        assert!(p2
            .terms
            .iter()
            .any(|t| matches!(t.base, BaseOp::MomentPower { pow: 3, deriv: 0, .. })));

        // kdv2: moment, derivative of squared moment, two derivative terms
        let pk = SchemeId::Kdv2.physical().unwrap();
        assert!(pk
            .terms
            .iter()
            .any(|t| matches!(t.base, BaseOp::MomentPower { pow: 2, deriv: 2, .. })));
    }

    #[test]
    fn stabilization_attaches_the_published_filters() {
        let expr = SchemeId::Nls2Stab.expression().unwrap();
        let mut saw_k = false;
        let mut saw_sym = false;
        for t in &expr.terms {
            for fu in &t.filters {
                match fu.arg {
                    FilterArg::K => {
                        assert_eq!(fu.id, FilterId::Psi);
                        saw_k = true;
                    }
                    FilterArg::Symbol(_) => {
                        assert_eq!(fu.id, FilterId::Psi);
                        saw_sym = true;
                    }
                    _ => {}
                }
            }
        }
        assert!(saw_k && saw_sym);

        let kexpr = SchemeId::Kdv2Stab.expression().unwrap();
        let ids: std::collections::BTreeSet<String> = kexpr
            .terms
            .iter()
            .flat_map(|t| t.filters.iter().map(|f| format!("{:?}", f.id)))
            .collect();
        assert_eq!(
            ids,
            ["Psi1", "Psi2", "Psi3"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
    }

    #[test]
    fn filtered_and_unfiltered_agree_at_higher_order() {
        // per-term slope of the filtered-unfiltered difference is >= r+2
        let plain = SchemeId::Nls2.expression().unwrap();
        let stab = SchemeId::Nls2Stab.expression().unwrap();
        let profile = |a: i64| 1.0 / (1.0 + a.abs() as f64).powi(2);
        let taus: Vec<f64> = (4..=9).map(|j| 0.5f64.powi(j)).collect();
        let k = 2;
        let errs: Vec<f64> = taus
            .iter()
            .map(|&tau| {
                (plain.eval_profile(&profile, k, 12, tau)
                    - stab.eval_profile(&profile, k, 12, tau))
                .abs()
            })
            .collect();
        let slope = crate::oscillatory::fit_slope(&taus, &errs);
        assert!(slope >= 2.75, "slope {}", slope);
    }
}
