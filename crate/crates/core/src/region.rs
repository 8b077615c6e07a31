//! Polytope of stabilizing gains, its Chebyshev ball, and operating ranges.
//!
//! Every entry of `H_bar = B_bar F C_bar` is linear in the packed gain
//! vector `f`. The disc conditions `phi_i + gamma_i <= 2 - eps` and
//! `phi_i - gamma_i >= eps` become linear once each absolute value in
//! `gamma_i` is expanded over its two signs, giving one inequality per sign
//! pattern.

use std::fmt::Write as _;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{maximize, LpStatus, SimplexOptions};
use crate::stability::check_region;
use crate::sysbuild::{closed_loop, GainMatrix, SparsityPattern, StateSpace};

pub const DEFAULT_ROW_CAP: usize = 1_000_000;

/// Which side of the disc condition a row encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    /// `phi + sum(sigma * l) <= 2 - eps`.
    Outer,
    /// `-phi + sum(sigma * l) <= -eps`.
    Inner,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowOrigin {
    pub disc_row: usize,
    pub bound: Bound,
    /// Bit `g` set means the `g`-th active group enters with a minus sign.
    pub signs: u64,
}

/// `a_k^T f <= b_k` for every row `k`.
#[derive(Clone, Debug)]
pub struct ParameterPolytope {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub origin: Vec<RowOrigin>,
    pub eps: f64,
    /// Off-diagonal terms that vanish identically and were not expanded.
    pub pruned_groups: usize,
}

impl ParameterPolytope {
    pub fn y(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn from_rows(rows: &[Vec<f64>], b: Vec<f64>) -> Result<Self> {
        let y = rows.first().map_or(0, Vec::len);
        if rows.len() != b.len() || rows.iter().any(|r| r.len() != y) {
            return Err(Error::Dimension("ragged polytope rows".into()));
        }
        let a = DMatrix::from_fn(rows.len(), y, |i, j| rows[i][j]);
        let origin = (0..rows.len())
            .map(|k| RowOrigin {
                disc_row: k,
                bound: Bound::Outer,
                signs: 0,
            })
            .collect();
        Ok(ParameterPolytope {
            a,
            b,
            origin,
            eps: 0.0,
            pruned_groups: 0,
        })
    }

    /// Smallest slack `b_k - a_k^T f` over all rows.
    pub fn min_slack(&self, f: &[f64]) -> f64 {
        let fv = nalgebra::DVector::from_column_slice(f);
        let af = &self.a * fv;
        (0..self.rows())
            .map(|k| self.b[k] - af[k])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, f: &[f64], tol: f64) -> bool {
        self.min_slack(f) >= -tol
    }

    /// Rows as CSV: `a_1,...,a_y,b`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.y()).map(|j| format!("a{j}")).collect();
        let _ = writeln!(out, "{},b", header.join(","));
        for k in 0..self.rows() {
            for j in 0..self.y() {
                let _ = write!(out, "{:e},", self.a[(k, j)]);
            }
            let _ = writeln!(out, "{:e}", self.b[k]);
        }
        out
    }
}

/// Linear forms of `H_bar` entries: `forms[i * s + j]` holds the coefficient
/// vector of `H_bar[i][j]` over the packed gain.
pub fn entry_forms(ss: &StateSpace, pattern: &SparsityPattern) -> Result<Vec<Vec<f64>>> {
    let red = ss.reduced()?;
    let s = ss.s();
    if pattern.d() != ss.d() || pattern.s() != s {
        return Err(Error::Dimension(format!(
            "pattern is {}x{}, model needs {}x{}",
            pattern.d(),
            pattern.s(),
            ss.d(),
            s
        )));
    }
    let y = pattern.y();
    let mut forms = vec![vec![0.0; y]; s * s];
    for (k, &(r, c)) in pattern.entries().iter().enumerate() {
        for i in 0..s {
            let bi = red.b_bar[(i, r)];
            if bi == 0.0 {
                continue;
            }
            for j in 0..s {
                forms[i * s + j][k] += bi * red.c_bar[(c, j)];
            }
        }
    }
    Ok(forms)
}

pub fn build_polytope(
    ss: &StateSpace,
    pattern: &SparsityPattern,
    eps: f64,
) -> Result<ParameterPolytope> {
    build_polytope_capped(ss, pattern, eps, DEFAULT_ROW_CAP)
}

pub fn build_polytope_capped(
    ss: &StateSpace,
    pattern: &SparsityPattern,
    eps: f64,
    cap: usize,
) -> Result<ParameterPolytope> {
    let s = ss.s();
    let y = pattern.y();
    let forms = entry_forms(ss, pattern)?;
    verify_linearity(ss, pattern, &forms)?;

    let scale = forms
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let zero_tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut groups_per_row = Vec::with_capacity(s);
    let mut pruned = 0usize;
    let mut total: u128 = 0;
    for i in 0..s {
        let active: Vec<usize> = (0..s)
            .filter(|&j| j != i)
            .filter(|&j| forms[i * s + j].iter().any(|v| v.abs() > zero_tol))
            .collect();
        pruned += s - 1 - active.len();
        if active.len() >= 64 {
            return Err(Error::Explosion {
                rows: u128::MAX,
                cap,
            });
        }
        total += 2u128 << active.len();
        groups_per_row.push(active);
    }
    if total > cap as u128 {
        return Err(Error::Explosion { rows: total, cap });
    }
    if pruned > 0 {
        info!("pruned {pruned} identically zero off-diagonal terms");
    }

    let rows = total as usize;
    let mut a = DMatrix::zeros(rows, y);
    let mut b = Vec::with_capacity(rows);
    let mut origin = Vec::with_capacity(rows);
    let mut k = 0;
    for (i, active) in groups_per_row.iter().enumerate() {
        let diag = &forms[i * s + i];
        for signs in 0u64..(1u64 << active.len()) {
            let mut sum = vec![0.0; y];
            for (g, &j) in active.iter().enumerate() {
                let sigma = if signs >> g & 1 == 1 { -1.0 } else { 1.0 };
                for (acc, v) in sum.iter_mut().zip(&forms[i * s + j]) {
                    *acc += sigma * v;
                }
            }
            for (bound, sign, rhs) in [(Bound::Outer, 1.0, 2.0 - eps), (Bound::Inner, -1.0, -eps)] {
                for col in 0..y {
                    a[(k, col)] = sign * diag[col] + sum[col];
                }
                b.push(rhs);
                origin.push(RowOrigin {
                    disc_row: i,
                    bound,
                    signs,
                });
                k += 1;
            }
        }
    }
    Ok(ParameterPolytope {
        a,
        b,
        origin,
        eps,
        pruned_groups: pruned,
    })
}

fn verify_linearity(ss: &StateSpace, pattern: &SparsityPattern, forms: &[Vec<f64>]) -> Result<()> {
    let y = pattern.y();
    let probe: Vec<f64> = (0..y).map(|k| 1.0 / (k as f64 + 1.5)).collect();
    let gain = GainMatrix::from_packed(pattern.clone(), &probe)?;
    let h_bar = closed_loop(ss, &gain)?.h_bar;
    let s = ss.s();
    for i in 0..s {
        for j in 0..s {
            let v: f64 = forms[i * s + j]
                .iter()
                .zip(&probe)
                .map(|(c, f)| c * f)
                .sum();
            let tol = 1e-10 * (1.0 + h_bar[(i, j)].abs());
            if (v - h_bar[(i, j)]).abs() > tol {
                return Err(Error::Numerical(format!(
                    "closed-loop entry ({i}, {j}) is not linear in the gain"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChebyshevResult {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Rows touching the ball (normalized slack within tolerance of the radius).
    pub active: Vec<usize>,
    pub lp_iterations: usize,
}

pub fn chebyshev(poly: &ParameterPolytope) -> Result<ChebyshevResult> {
    let y = poly.y();
    let norms: Vec<f64> = (0..poly.rows()).map(|k| poly.a.row(k).norm()).collect();
    let mut keep = Vec::new();
    for (k, &nk) in norms.iter().enumerate() {
        if nk > 1e-14 {
            keep.push(k);
        } else if poly.b[k] < -1e-12 {
            // 0 <= b_k fails for every f.
            return Err(Error::Infeasible(poly.b[k]));
        }
    }
    if keep.is_empty() {
        return Err(Error::Unbounded);
    }
    let m = keep.len();
    let mut lp_a = DMatrix::zeros(m, y + 1);
    let mut lp_b = Vec::with_capacity(m);
    for (row, &k) in keep.iter().enumerate() {
        for j in 0..y {
            lp_a[(row, j)] = poly.a[(k, j)] / norms[k];
        }
        lp_a[(row, y)] = 1.0;
        lp_b.push(poly.b[k] / norms[k]);
    }
    let mut objective = vec![0.0; y + 1];
    objective[y] = 1.0;
    let sol = maximize(&lp_a, &lp_b, &objective, SimplexOptions::default())?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => return Err(Error::Unbounded),
        LpStatus::Infeasible => return Err(Error::Infeasible(f64::NEG_INFINITY)),
    }
    let center = sol.z[..y].to_vec();
    // Recompute the radius from the center so the ball is feasible by
    // substitution rather than by trust in the pivots.
    let cv = nalgebra::DVector::from_column_slice(&center);
    let slack = lp_a.columns(0, y) * cv;
    let normalized: Vec<f64> = (0..m).map(|r| lp_b[r] - slack[r]).collect();
    let radius = normalized.iter().copied().fold(f64::INFINITY, f64::min);
    if (radius - sol.z[y]).abs() > 1e-7 * (1.0 + radius.abs()) {
        warn!(
            "LP radius {} differs from recomputed radius {radius}",
            sol.z[y]
        );
    }
    if radius < 0.0 {
        return Err(Error::Infeasible(radius));
    }
    let tol = 1e-9 * (1.0 + radius);
    let active = (0..m)
        .filter(|&r| normalized[r] - radius <= tol)
        .map(|r| keep[r])
        .collect();
    Ok(ChebyshevResult {
        center,
        radius,
        active,
        lp_iterations: sol.iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    /// Width `c * sqrt(2)`: the inscribed square of a planar slice.
    PaperSquare,
    /// Width `2c / sqrt(y)`: the whole hypercube stays inside the ball.
    SafeHypercube,
}

impl RangeMode {
    pub fn width(self, radius: f64, y: usize) -> f64 {
        match self {
            RangeMode::PaperSquare => radius * std::f64::consts::SQRT_2,
            RangeMode::SafeHypercube => 2.0 * radius / (y as f64).sqrt(),
        }
    }
}

impl std::str::FromStr for RangeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-square" => Ok(RangeMode::PaperSquare),
            "safe" | "safe-hypercube" => Ok(RangeMode::SafeHypercube),
            other => Err(Error::parse(0, format!("unknown range mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatingRanges {
    pub mode: RangeMode,
    pub width: f64,
    /// `(low, high)` per packed parameter.
    pub intervals: Vec<(f64, f64)>,
}

pub fn parameter_ranges(cheb: &ChebyshevResult, mode: RangeMode) -> Result<OperatingRanges> {
    if cheb.radius <= 0.0 {
        return Err(Error::Degenerate);
    }
    let width = mode.width(cheb.radius, cheb.center.len());
    let intervals = cheb
        .center
        .iter()
        .map(|&c| (c - width / 2.0, c + width / 2.0))
        .collect();
    Ok(OperatingRanges {
        mode,
        width,
        intervals,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplePolicy {
    Midpoint,
    Upper,
    Lower,
    /// Reactive-power response to magnitude errors at the upper bounds.
    QuadrantUpper,
    /// Real-power response to magnitude errors at the lower bounds.
    QuadrantLower,
}

impl std::str::FromStr for SamplePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(SamplePolicy::Midpoint),
            "upper" => Ok(SamplePolicy::Upper),
            "lower" => Ok(SamplePolicy::Lower),
            "quadrant-upper" => Ok(SamplePolicy::QuadrantUpper),
            "quadrant-lower" => Ok(SamplePolicy::QuadrantLower),
            other => Err(Error::parse(0, format!("unknown gain policy `{other}`"))),
        }
    }
}

/// Picks one value per range and packs them into a gain. The quadrant
/// policies move only one block of the reduced gain (reactive rows or real
/// rows against magnitude-error columns) and keep the rest at midpoint.
pub fn sample_gain(
    ranges: &OperatingRanges,
    pattern: &SparsityPattern,
    policy: SamplePolicy,
) -> Result<GainMatrix> {
    if ranges.intervals.len() != pattern.y() {
        return Err(Error::Dimension(format!(
            "{} ranges for {} parameters",
            ranges.intervals.len(),
            pattern.y()
        )));
    }
    let half_d = pattern.d() / 2;
    let half_s = pattern.s() / 2;
    let values: Vec<f64> = pattern
        .entries()
        .iter()
        .zip(&ranges.intervals)
        .map(|(&(r, c), &(lo, hi))| {
            let mid = 0.5 * (lo + hi);
            let magnitude_col = c < half_s;
            match policy {
                SamplePolicy::Midpoint => mid,
                SamplePolicy::Upper => hi,
                SamplePolicy::Lower => lo,
                SamplePolicy::QuadrantUpper if r < half_d && magnitude_col => hi,
                SamplePolicy::QuadrantLower if r >= half_d && magnitude_col => lo,
                _ => mid,
            }
        })
        .collect();
    GainMatrix::from_packed(pattern.clone(), &values)
}

/// Gain drawn uniformly from the hypercube of operating ranges.
pub fn sample_uniform<R: rand::Rng>(
    ranges: &OperatingRanges,
    pattern: &SparsityPattern,
    rng: &mut R,
) -> Result<GainMatrix> {
    let values: Vec<f64> = ranges
        .intervals
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
        .collect();
    GainMatrix::from_packed(pattern.clone(), &values)
}

/// Planar slice through the center: feasibility on a grid over two
/// coordinates with all others fixed at the center.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Slice {
    pub dims: (usize, usize),
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `ys` then `xs`.
    pub feasible: Vec<bool>,
}

pub fn slice(
    poly: &ParameterPolytope,
    cheb: &ChebyshevResult,
    dims: (usize, usize),
    half_width: f64,
    resolution: usize,
) -> Result<Slice> {
    let y = poly.y();
    if dims.0 >= y || dims.1 >= y || dims.0 == dims.1 || resolution < 2 {
        return Err(Error::Dimension(format!(
            "invalid slice {dims:?} of {y} parameters"
        )));
    }
    let axis = |center: f64| -> Vec<f64> {
        (0..resolution)
            .map(|k| center - half_width + 2.0 * half_width * k as f64 / (resolution - 1) as f64)
            .collect()
    };
    let xs = axis(cheb.center[dims.0]);
    let ys = axis(cheb.center[dims.1]);
    let mut point = cheb.center.clone();
    let mut feasible = Vec::with_capacity(resolution * resolution);
    for &yv in &ys {
        for &xv in &xs {
            point[dims.0] = xv;
            point[dims.1] = yv;
            feasible.push(poly.contains(&point, 1e-12));
        }
    }
    Ok(Slice {
        dims,
        xs,
        ys,
        feasible,
    })
}

/// True when the closed loop of every listed gain passes the disc check.
pub fn all_pass(ss: &StateSpace, gains: &[GainMatrix], eps: f64) -> Result<bool> {
    for g in gains {
        if !check_region(&closed_loop(ss, g)?, eps) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_impedance_matrices, Edge, RadialNetwork};
    use crate::placement::Placement;
    use crate::stability::{check_region, gershgorin};
    use crate::sysbuild::build_open_loop;

    fn single_dsp() -> (StateSpace, SparsityPattern) {
        // One edge 0-1 with r = 0.1, x = 0.2, so R = 0.2, X = 0.4 at node 1.
        let net = RadialNetwork::new(1, vec![Edge::new(0, 1, 0.1, 0.2)], 1).unwrap();
        let mats = build_impedance_matrices(&net);
        let p = Placement::colocated(1, 1, &[1]).unwrap();
        let ss = build_open_loop(&mats, &p).unwrap();
        // Diagonal F: f_q on (q, v), f_p on (p, delta).
        let pattern = SparsityPattern::new(2, 2, vec![(0, 0), (1, 1)]).unwrap();
        (ss, pattern)
    }

    #[test]
    fn single_dsp_expands_to_eight_rows() {
        let (ss, pattern) = single_dsp();
        let eps = 0.01;
        let poly = build_polytope(&ss, &pattern, eps).unwrap();
        assert_eq!(poly.rows(), 8);
        // H_bar = [[X fq, R fp], [-R/2 fq, X/2 fp]] with X = 0.4, R = 0.2.
        let mut rows: Vec<(Vec<f64>, f64)> = (0..8)
            .map(|k| (vec![poly.a[(k, 0)], poly.a[(k, 1)]], poly.b[k]))
            .collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = vec![
            (vec![0.4, 0.2], 2.0 - eps),
            (vec![0.4, -0.2], 2.0 - eps),
            (vec![-0.4, 0.2], -eps),
            (vec![-0.4, -0.2], -eps),
            (vec![0.1, 0.2], 2.0 - eps),
            (vec![-0.1, 0.2], 2.0 - eps),
            (vec![0.1, -0.2], -eps),
            (vec![-0.1, -0.2], -eps),
        ];
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in rows.iter().zip(&expected) {
            for j in 0..2 {
                assert!((got.0[j] - want.0[j]).abs() < 1e-15);
            }
            assert_eq!(got.1, want.1);
        }
    }

    #[test]
    fn origin_is_outside_for_positive_eps() {
        let (ss, pattern) = single_dsp();
        let poly = build_polytope(&ss, &pattern, 0.01).unwrap();
        assert!(!poly.contains(&[0.0, 0.0], 0.0));
    }

    #[test]
    fn explosion_cap_is_enforced() {
        let (ss, pattern) = single_dsp();
        assert!(matches!(
            build_polytope_capped(&ss, &pattern, 0.01, 4),
            Err(Error::Explosion { rows: 8, cap: 4 })
        ));
    }

    #[test]
    fn unit_box_ball() {
        let poly = ParameterPolytope::from_rows(
            &[
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
            ],
            vec![1.0; 4],
        )
        .unwrap();
        let c = chebyshev(&poly).unwrap();
        assert!((c.radius - 1.0).abs() < 1e-12);
        assert!(c.center.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn triangle_incircle() {
        let poly = ParameterPolytope::from_rows(
            &[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
            vec![0.0, 0.0, 1.0],
        )
        .unwrap();
        let c = chebyshev(&poly).unwrap();
        let r = 1.0 / (2.0 + std::f64::consts::SQRT_2);
        assert!((c.radius - r).abs() < 1e-12);
        assert!((c.center[0] - r).abs() < 1e-12 && (c.center[1] - r).abs() < 1e-12);
        assert_eq!(c.active.len(), 3);
    }

    #[test]
    fn empty_and_unbounded_polytopes() {
        let empty =
            ParameterPolytope::from_rows(&[vec![1.0], vec![-1.0]], vec![-1.0, -1.0]).unwrap();
        assert!(matches!(chebyshev(&empty), Err(Error::Infeasible(_))));
        let open = ParameterPolytope::from_rows(&[vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert!(matches!(chebyshev(&open), Err(Error::Unbounded)));
        let zero_row = ParameterPolytope::from_rows(&[vec![0.0]], vec![-0.5]).unwrap();
        assert!(matches!(chebyshev(&zero_row), Err(Error::Infeasible(_))));
    }

    #[test]
    fn planar_square_widths() {
        for (r, w) in [(0.0275, 0.0389), (0.1037, 0.1466)] {
            let c = ChebyshevResult {
                center: vec![0.0; 120],
                radius: r,
                active: vec![],
                lp_iterations: 0,
            };
            let ranges = parameter_ranges(&c, RangeMode::PaperSquare).unwrap();
            assert!((ranges.width - w).abs() < 1e-4);
        }
        let c = ChebyshevResult {
            center: vec![0.0; 120],
            radius: 0.1037,
            active: vec![],
            lp_iterations: 0,
        };
        let safe = parameter_ranges(&c, RangeMode::SafeHypercube).unwrap();
        assert!((safe.width - 0.018_933).abs() < 1e-5);
        let zero = ChebyshevResult { radius: 0.0, ..c };
        assert!(matches!(
            parameter_ranges(&zero, RangeMode::SafeHypercube),
            Err(Error::Degenerate)
        ));
    }

    #[test]
    fn center_and_policies_pass_the_disc_check() {
        let (ss, pattern) = single_dsp();
        let eps = 0.01;
        let poly = build_polytope(&ss, &pattern, eps).unwrap();
        let cheb = chebyshev(&poly).unwrap();
        let center = GainMatrix::from_packed(pattern.clone(), &cheb.center).unwrap();
        let cl = closed_loop(&ss, &center).unwrap();
        assert!(check_region(&cl, eps));
        for d in gershgorin(&cl) {
            assert!(d.center - d.radius >= eps - 1e-12);
        }
        let ranges = parameter_ranges(&cheb, RangeMode::SafeHypercube).unwrap();
        for policy in [
            SamplePolicy::Midpoint,
            SamplePolicy::Upper,
            SamplePolicy::Lower,
        ] {
            let g = sample_gain(&ranges, &pattern, policy).unwrap();
            assert!(check_region(&closed_loop(&ss, &g).unwrap(), eps));
        }
        let mid = sample_gain(&ranges, &pattern, SamplePolicy::Midpoint).unwrap();
        assert_eq!(mid.packed(), cheb.center);
    }

    #[test]
    fn slice_marks_center_feasible() {
        let (ss, pattern) = single_dsp();
        let poly = build_polytope(&ss, &pattern, 0.01).unwrap();
        let cheb = chebyshev(&poly).unwrap();
        let sl = slice(&poly, &cheb, (0, 1), cheb.radius * 3.0, 11).unwrap();
        assert!(sl.feasible[5 * 11 + 5]);
        assert!(sl.feasible.iter().any(|f| !f));
    }
}
