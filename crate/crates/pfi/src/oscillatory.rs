//! Evaluation of the exact character and its full-Taylor approximation on
//! concrete frequency assignments.
//!
//! The exact character maps a decorated tree to a finite sum
//! `sum_j Q_j(tau) e^{i tau phi_j}` with polynomial `Q_j` and integer phases
//! `phi_j`; time integrals of `xi^q e^{i xi phi}` are done in closed form by
//! integration by parts. The approximation character replaces every
//! integrator edge by the full Taylor expansion of its oscillation, producing
//! a pure polynomial in `tau` under the root carrier phase.

use crate::sympoly::SymbolId;
use crate::trees::{degree, DecoratedTree, DispersionSpec, EdgeDecoration};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt;

// ---------------------------------------------------------------------------
// Frequency assignments and oscillatory sums
// ---------------------------------------------------------------------------

/// Concrete integer frequencies for the formal symbols.
#[derive(Clone, Debug, Default)]
pub struct FrequencyAssignment {
    pub dimension: usize,
    map: BTreeMap<SymbolId, Vec<i64>>,
}

impl FrequencyAssignment {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            map: BTreeMap::new(),
        }
    }

    pub fn d1(pairs: &[(SymbolId, i64)]) -> Self {
        let mut a = Self::new(1);
        for &(s, v) in pairs {
            a.set(s, vec![v]);
        }
        a
    }

    pub fn set(&mut self, s: SymbolId, v: Vec<i64>) {
        assert_eq!(v.len(), self.dimension);
        self.map.insert(s, v);
    }

    pub fn get(&self, s: SymbolId) -> Vec<i64> {
        self.map
            .get(&s)
            .unwrap_or_else(|| panic!("unassigned frequency symbol {}", s))
            .clone()
    }

    pub fn freq_value(&self, f: &crate::trees::LinearFrequency) -> Vec<i64> {
        f.eval(&|s| self.get(s), self.dimension)
    }
}

/// One term `Q(tau) e^{i tau phase}` with an exact integer phase.
#[derive(Clone, Debug)]
pub struct OscTerm {
    pub coeffs: Vec<Complex64>,
    pub phase: i64,
}

/// A finite sum of polynomial-times-oscillation terms; the evaluation
/// codomain of the characters. Terms are merged by phase and zero
/// polynomials pruned.
#[derive(Clone, Debug, Default)]
pub struct OscillatorySum {
    pub terms: Vec<OscTerm>,
}

impl OscillatorySum {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::monomial(0, Complex64::new(1.0, 0.0), 0)
    }

    pub fn monomial(power: usize, coeff: Complex64, phase: i64) -> Self {
        let mut coeffs = vec![Complex64::default(); power + 1];
        coeffs[power] = coeff;
        let mut s = Self::zero();
        s.add_term(OscTerm { coeffs, phase });
        s
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, t: OscTerm) {
        if t.coeffs.iter().all(|c| c.norm_sqr() == 0.0) {
            return;
        }
        match self.terms.iter_mut().find(|u| u.phase == t.phase) {
            Some(u) => {
                if u.coeffs.len() < t.coeffs.len() {
                    u.coeffs.resize(t.coeffs.len(), Complex64::default());
                }
                for (a, b) in u.coeffs.iter_mut().zip(t.coeffs.iter()) {
                    *a += *b;
                }
            }
            None => self.terms.push(t),
        }
        self.terms.sort_by_key(|u| u.phase);
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for t in &other.terms {
            out.add_term(t.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for a in &self.terms {
            for b in &other.terms {
                let mut coeffs =
                    vec![Complex64::default(); a.coeffs.len() + b.coeffs.len() - 1];
                for (i, ca) in a.coeffs.iter().enumerate() {
                    for (j, cb) in b.coeffs.iter().enumerate() {
                        coeffs[i + j] += ca * cb;
                    }
                }
                out.add_term(OscTerm {
                    coeffs,
                    phase: a.phase + b.phase,
                });
            }
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            for x in &mut t.coeffs {
                *x *= c;
            }
        }
        out
    }

    /// Multiply by `tau^p`.
    pub fn shift(&self, p: usize) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            let mut coeffs = vec![Complex64::default(); p];
            coeffs.extend_from_slice(&t.coeffs);
            out.add_term(OscTerm {
                coeffs,
                phase: t.phase,
            });
        }
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            out.add_term(OscTerm {
                coeffs: t.coeffs.iter().map(Complex64::conj).collect(),
                phase: -t.phase,
            });
        }
        out
    }

    pub fn eval(&self, tau: f64) -> Complex64 {
        let mut acc = Complex64::default();
        for t in &self.terms {
            let mut poly = Complex64::default();
            let mut tp = 1.0;
            for c in &t.coeffs {
                poly += c * tp;
                tp *= tau;
            }
            acc += poly * Complex64::new(0.0, tau * t.phase as f64).exp();
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    /// A paired product was expected to have cancelled carrier phases.
    PairingViolation { residual_phase: i64 },
    /// taylor_K precondition `q <= r` violated.
    OrderTooLow { q: usize, r: i32 },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::PairingViolation { residual_phase } => {
                write!(f, "nonzero residual phase {} in a paired product", residual_phase)
            }
            EvalError::OrderTooLow { q, r } => write!(f, "monomial degree {} exceeds order {}", q, r),
        }
    }
}

impl std::error::Error for EvalError {}

// ---------------------------------------------------------------------------
// Exact character
// ---------------------------------------------------------------------------

/// Closed form of `int_0^tau xi^q e^{i xi phi} dxi`.
///
/// `phi = 0` gives `tau^{q+1}/(q+1)`; otherwise the stable
/// integration-by-parts recurrence
/// `I_q = tau^q e^{i phi tau}/(i phi) - (q/(i phi)) I_{q-1}`.
/// Phases are exact integers, so the zero branch is exact.
fn integrate_monomial(q: usize, phi: i64) -> OscillatorySum {
    if phi == 0 {
        return OscillatorySum::monomial(q + 1, Complex64::new(1.0 / (q as f64 + 1.0), 0.0), 0);
    }
    let iphi_inv = Complex64::new(0.0, phi as f64).inv();
    // oscillating part A_q(tau) e^{i phi tau} plus constant c_q
    let mut a = vec![iphi_inv]; // A_0 = 1/(i phi)
    let mut c = -iphi_inv; //       c_0 = -1/(i phi)
    for m in 1..=q {
        let mut next = vec![Complex64::default(); m + 1];
        next[m] = iphi_inv;
        for (j, v) in a.iter().enumerate() {
            next[j] -= (m as f64) * iphi_inv * v;
        }
        a = next;
        c = -(m as f64) * iphi_inv * c;
    }
    let mut out = OscillatorySum::zero();
    out.add_term(OscTerm {
        coeffs: a,
        phase: phi,
    });
    out.add_term(OscTerm {
        coeffs: vec![c],
        phase: 0,
    });
    out
}

fn integrate_sum(s: &OscillatorySum, edge_phase: i64) -> OscillatorySum {
    let mut out = OscillatorySum::zero();
    for t in &s.terms {
        for (q, coeff) in t.coeffs.iter().enumerate() {
            if coeff.norm_sqr() == 0.0 {
                continue;
            }
            out = out.add(&integrate_monomial(q, edge_phase + t.phase).scale(*coeff));
        }
    }
    out
}

fn edge_phase_num(spec: &DispersionSpec, edge: EdgeDecoration, k: &[i64]) -> i64 {
    let v = spec.dispersion_value(edge.label, k);
    if edge.conj {
        -v
    } else {
        v
    }
}

/// Exact character of a decorated tree at a concrete assignment.
pub fn eval_pi(
    tree: &DecoratedTree,
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
) -> OscillatorySum {
    let k = assign.freq_value(&tree.freq);
    let phase = edge_phase_num(spec, tree.edge, &k);
    if !spec.is_integrator(tree.edge.label) {
        let children = eval_pi_forest(&tree.children, spec, assign);
        let osc = OscillatorySum::monomial(tree.poly_exp as usize, Complex64::new(1.0, 0.0), phase);
        osc.mul(&children)
    } else {
        let children = eval_pi_forest(&tree.children, spec, assign);
        let pref = integrator_prefactor_num(spec, tree.edge.conj, &k);
        integrate_sum(&children.shift(tree.poly_exp as usize), phase).scale(pref)
    }
}

fn integrator_prefactor_num(spec: &DispersionSpec, conj: bool, k: &[i64]) -> Complex64 {
    spec.integrator_prefactor(conj, k)
}

/// Exact character of a forest (product of trees).
pub fn eval_pi_forest(
    trees: &[DecoratedTree],
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
) -> OscillatorySum {
    let mut acc = OscillatorySum::one();
    for t in trees {
        acc = acc.mul(&eval_pi(t, spec, assign));
    }
    acc
}

// ---------------------------------------------------------------------------
// Full-Taylor approximation character
// ---------------------------------------------------------------------------

/// Full Taylor expansion of `pref * int_0^tau xi^q e^{i xi total_phase} dxi`
/// up to order `r`:
/// `pref * sum_{l <= r-q} tau^{l+q+1}/(l! (l+q+1)) (i total_phase)^l`.
///
/// `pref` is `-i (ik)^alpha` for an unconjugated integrator edge and its
/// conjugate for a conjugated one. The a-priori regularity `n` does not enter
/// the value of the full-Taylor branch; it only shifts the error bound. The
/// dominant/lower resonance split is a documented hook of
/// [`ApproxMode`]; the full Taylor expansion is its sole provider.
pub fn taylor_k(
    spec: &DispersionSpec,
    edge: EdgeDecoration,
    k: &[i64],
    r: i32,
    q: usize,
    total_phase: i64,
) -> Result<OscillatorySum, EvalError> {
    if (q as i32) > r {
        return Err(EvalError::OrderTooLow { q, r });
    }
    debug_assert!(spec.is_integrator(edge.label));
    let pref = integrator_prefactor_num(spec, edge.conj, k);
    let mut out = OscillatorySum::zero();
    let ip = Complex64::new(0.0, total_phase as f64);
    let mut ip_pow = Complex64::new(1.0, 0.0);
    let mut fact = 1.0;
    for l in 0..=(r as usize - q) {
        if l > 0 {
            fact *= l as f64;
            ip_pow *= ip;
        }
        let denom = fact * (l + q + 1) as f64;
        out = out.add(&OscillatorySum::monomial(l + q + 1, pref * ip_pow / denom, 0));
    }
    Ok(out)
}

/// Choice of approximation of the oscillatory integrals. Only the full
/// Taylor expansion is provided; a dominant/lower resonance split would slot
/// in here as a second variant.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ApproxMode {
    #[default]
    FullTaylor,
}

/// Approximation character at order `r`: products multiply, non-integrator
/// edges contribute their oscillation times the child value at reduced
/// order, and integrator edges Taylor-expand the child value through
/// [`taylor_k`]. Returns the zero sum when the order projection annihilates
/// the tree.
pub fn eval_pi_nr(
    tree: &DecoratedTree,
    r: i32,
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
) -> OscillatorySum {
    if r + 1 < degree(tree, spec) as i32 {
        return OscillatorySum::zero();
    }
    let k = assign.freq_value(&tree.freq);
    let ell = tree.poly_exp as usize;
    if !spec.is_integrator(tree.edge.label) {
        let phase = edge_phase_num(spec, tree.edge, &k);
        let child_order = r - ell as i32;
        let mut children = OscillatorySum::one();
        for c in &tree.children {
            children = children.mul(&eval_pi_nr(c, child_order, spec, assign));
        }
        OscillatorySum::monomial(ell, Complex64::new(1.0, 0.0), phase).mul(&children)
    } else {
        let child_order = r - ell as i32 - 1;
        let mut children = OscillatorySum::one();
        for c in &tree.children {
            children = children.mul(&eval_pi_nr(c, child_order, spec, assign));
        }
        let children = children.shift(ell);
        let edge_phase = edge_phase_num(spec, tree.edge, &k);
        let pref = integrator_prefactor_num(spec, tree.edge.conj, &k);
        let mut out = OscillatorySum::zero();
        for t in &children.terms {
            for (q, coeff) in t.coeffs.iter().enumerate() {
                if coeff.norm_sqr() == 0.0 || q as i32 > r {
                    continue;
                }
                let total = edge_phase + t.phase;
                let mut ip_pow = Complex64::new(1.0, 0.0);
                let ip = Complex64::new(0.0, total as f64);
                let mut fact = 1.0;
                for l in 0..=(r as usize - q) {
                    if l > 0 {
                        fact *= l as f64;
                        ip_pow *= ip;
                    }
                    let denom = fact * (l + q + 1) as f64;
                    out = out.add(&OscillatorySum::monomial(
                        l + q + 1,
                        pref * coeff * ip_pow / denom,
                        0,
                    ));
                }
            }
        }
        out
    }
}

/// Truncation of a paired product: asserts the carrier phases cancelled and
/// keeps tau powers up to `r + 1`.
pub fn truncate(s: &OscillatorySum, r: i32) -> Result<Vec<Complex64>, EvalError> {
    let mut coeffs: Vec<Complex64> = Vec::new();
    for t in &s.terms {
        if t.phase != 0 {
            return Err(EvalError::PairingViolation {
                residual_phase: t.phase,
            });
        }
        if coeffs.len() < t.coeffs.len() {
            coeffs.resize(t.coeffs.len(), Complex64::default());
        }
        for (a, b) in coeffs.iter_mut().zip(t.coeffs.iter()) {
            *a += *b;
        }
    }
    coeffs.truncate((r + 2).max(0) as usize);
    Ok(coeffs)
}

// ---------------------------------------------------------------------------
// Local-error functional
// ---------------------------------------------------------------------------

/// Magnitudes of the local-error monomials at a concrete assignment.
#[derive(Clone, Debug, Default)]
pub struct ErrorMonomialSet {
    pub entries: Vec<f64>,
}

impl ErrorMonomialSet {
    fn one() -> Self {
        Self { entries: vec![1.0] }
    }

    fn merge(mut self, other: Self) -> Self {
        self.entries.extend(other.entries);
        self
    }

    fn scale(mut self, w: f64) -> Self {
        for e in &mut self.entries {
            *e *= w;
        }
        self
    }

    pub fn dominant(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }
}

/// Number of integrator edges plus time-monomial exponents of a forest.
fn n_hat_plus(forest: &[DecoratedTree], spec: &DispersionSpec) -> u32 {
    forest
        .iter()
        .map(|t| {
            let mut total = 0;
            t.visit(&mut |n| total += spec.is_integrator(n.edge.label) as u32 + n.poly_exp);
            total
        })
        .sum()
}

/// The zeroth-order magnitude bound of the exact character: the product of
/// derivative-symbol magnitudes over the integrator nodes.
fn pi_zero(forest: &[DecoratedTree], spec: &DispersionSpec, assign: &FrequencyAssignment) -> f64 {
    let mut acc = 1.0;
    for t in forest {
        t.visit(&mut |n| {
            if spec.is_integrator(n.edge.label) {
                let k = assign.freq_value(&n.freq);
                acc *= spec.derivative_symbol(&k).norm();
            }
        });
    }
    acc
}

/// Magnitude of the coefficient of `tau^l` in the approximation character of
/// a forest.
fn pi_nr_coeff(
    forest: &[DecoratedTree],
    r: i32,
    l: usize,
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
) -> f64 {
    let mut prod = OscillatorySum::one();
    for t in forest {
        prod = prod.mul(&eval_pi_nr(t, r, spec, assign));
    }
    prod
        .terms
        .iter()
        .map(|t| t.coeffs.get(l).map_or(0.0, |c| c.norm()))
        .sum()
}

/// Recursive local-error functional of the full-Taylor approximation,
/// evaluated at a concrete assignment. The Taylor remainder of an integrator
/// edge contributes `(edge phase + child phase)^{r+1-q} (ik)^alpha` per
/// monomial of the child value.
pub fn local_error(
    forest: &[DecoratedTree],
    n: u32,
    r: i32,
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
) -> ErrorMonomialSet {
    if r < 0 {
        return ErrorMonomialSet::one();
    }
    match forest {
        [] => ErrorMonomialSet::one(),
        [tree] => {
            let k = assign.freq_value(&tree.freq);
            let ell = tree.poly_exp as i32;
            if !spec.is_integrator(tree.edge.label) {
                local_error(&tree.children, n, r - ell, spec, assign)
            } else {
                let inner = local_error(&tree.children, n, r - ell - 1, spec, assign)
                    .scale(spec.derivative_symbol(&k).norm());
                // Taylor remainder of the full expansion
                let mut child_val = OscillatorySum::one();
                for c in &tree.children {
                    child_val = child_val.mul(&eval_pi_nr(c, r - ell - 1, spec, assign));
                }
                let child_val = child_val.shift(tree.poly_exp as usize);
                let edge_phase = edge_phase_num(spec, tree.edge, &k);
                let alpha_mag = spec.derivative_symbol(&k).norm();
                let mut remainder = ErrorMonomialSet::default();
                for t in &child_val.terms {
                    for (q, coeff) in t.coeffs.iter().enumerate() {
                        if coeff.norm_sqr() == 0.0 || q as i32 > r {
                            continue;
                        }
                        let total = (edge_phase + t.phase) as f64;
                        let pow = (r + 1 - q as i32) as u32;
                        remainder
                            .entries
                            .push(coeff.norm() * total.abs().powi(pow as i32) * alpha_mag);
                    }
                }
                inner.merge(remainder)
            }
        }
        [first, rest @ ..] => {
            let np2 = n_hat_plus(rest, spec) as i32;
            let part1 = local_error(std::slice::from_ref(first), n, r - np2, spec, assign)
                .scale(pi_zero(rest, spec, assign));
            let mut out = part1;
            for l in 0..=((r + 1 - np2).max(0) as usize) {
                let w = pi_nr_coeff(std::slice::from_ref(first), r - np2, l, spec, assign);
                if w == 0.0 {
                    continue;
                }
                out = out.merge(local_error(rest, n, r - l as i32, spec, assign).scale(w));
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Order verification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OrderCheck {
    /// The difference vanishes to rounding; no approximation error.
    Exact,
    /// Fitted slope of log error against log tau.
    Slope(f64),
}

/// Least-squares slope of `log err` against `log tau`.
pub fn fit_slope(taus: &[f64], errs: &[f64]) -> f64 {
    let n = taus.len() as f64;
    let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Observed order at the asymptotic end of the grid: the slope over the
/// finest three points (two refinement steps). Coarser points saturate once
/// the resonance phase beats 1/tau and would bias the fitted order downward
/// for large frequencies.
pub fn fit_slope_asymptotic(taus: &[f64], errs: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = taus.iter().copied().zip(errs.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let keep = pairs.len().min(3);
    let (t, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().take(keep).unzip();
    fit_slope(&t, &e)
}

/// Compare the exact paired product against its truncated approximation over
/// a tau grid: identically-vanishing differences report [`OrderCheck::Exact`],
/// otherwise the fitted slope is returned.
pub fn order_check(
    left: &DecoratedTree,
    right: &DecoratedTree,
    r: i32,
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
    taus: &[f64],
) -> Result<OrderCheck, EvalError> {
    let exact = eval_pi(left, spec, assign)
        .conj()
        .mul(&eval_pi(right, spec, assign));
    let approx_sum = eval_pi_nr(left, r, spec, assign)
        .conj()
        .mul(&eval_pi_nr(right, r, spec, assign));
    let approx = truncate(&approx_sum, r)?;
    let errs: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let mut a = Complex64::default();
            let mut tp = 1.0;
            for c in &approx {
                a += c * tp;
                tp *= tau;
            }
            (exact.eval(tau) - a).norm()
        })
        .collect();
    if errs.iter().all(|&e| e < 1e-12) {
        return Ok(OrderCheck::Exact);
    }
    Ok(OrderCheck::Slope(fit_slope_asymptotic(taus, &errs)))
}
