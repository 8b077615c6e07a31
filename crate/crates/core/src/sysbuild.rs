//! Open-loop model, its minimal realization, and closed-loop matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::netmodel::ImpedanceMatrices;
use crate::placement::{build_selectors, Placement, Selectors};

/// Reduced (minimal) realization: `A_bar = I_s`.
#[derive(Clone, Debug)]
pub struct Reduced {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
}

/// Tracking-error model `e[k+1] = A e[k] + B u[k]`, `y = C e`, with
/// `e = [e_v; e_delta]` over all node-phases and `u = [u_q; u_p]` over DER node-phases.
#[derive(Clone, Debug)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `R = R0 T^d`, `N x d/2`.
    pub r: DMatrix<f64>,
    /// `X = X0 T^d`, `N x d/2`.
    pub x: DMatrix<f64>,
    pub selectors: Selectors,
    pub placement: Placement,
    pub reduced: Option<Reduced>,
}

impl StateSpace {
    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub fn s(&self) -> usize {
        self.c.nrows()
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    /// Reduced matrices, computing them when absent.
    pub fn reduced(&self) -> Result<Reduced> {
        match &self.reduced {
            Some(r) => Ok(r.clone()),
            None => Ok(reduce(self)?.reduced.expect("reduce populates")),
        }
    }
}

pub fn build_open_loop(mats: &ImpedanceMatrices, p: &Placement) -> Result<StateSpace> {
    if mats.dim() != p.width() || mats.phases != p.phases() {
        return Err(Error::Dimension(format!(
            "impedance matrices are {}x{} ({} phases) but the placement spans {} node-phases ({} phases)",
            mats.dim(),
            mats.dim(),
            mats.phases,
            p.width(),
            p.phases()
        )));
    }
    let sel = build_selectors(p, false)?;
    let r = &mats.r0 * &sel.td;
    let x = &mats.x0 * &sel.td;
    let width = p.width();
    let half = r.ncols();
    let mut b = DMatrix::zeros(2 * width, 2 * half);
    b.view_mut((0, 0), (width, half)).copy_from(&x);
    b.view_mut((0, half), (width, half)).copy_from(&r);
    b.view_mut((width, 0), (width, half))
        .copy_from(&(&r * -0.5));
    b.view_mut((width, half), (width, half))
        .copy_from(&(&x * 0.5));
    Ok(StateSpace {
        a: DMatrix::identity(2 * width, 2 * width),
        b,
        c: sel.ts.clone(),
        r,
        x,
        selectors: sel,
        placement: p.clone(),
        reduced: None,
    })
}

/// Minimal realization: `B_bar = G^T T^-1 B`, `C_bar = C T G`.
pub fn reduce(ss: &StateSpace) -> Result<StateSpace> {
    ss.placement.require_sensors_have_ders()?;
    let sel = &ss.selectors;
    let t_inv = sel.t.transpose();
    let b_bar = sel.g.transpose() * (&t_inv * &ss.b);
    let c_bar = &ss.c * &sel.t * &sel.g;
    let s = ss.s();
    let mut out = ss.clone();
    out.reduced = Some(Reduced {
        a_bar: DMatrix::identity(s, s),
        b_bar,
        c_bar,
    });
    Ok(out)
}

/// Which error-to-injection couplings a communication link enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    /// Reactive and real power each respond to magnitude and angle errors.
    Full,
    /// Reactive power responds to magnitude errors, real power to angle errors.
    Paired,
}

impl std::str::FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PatternKind::Full),
            "paired" => Ok(PatternKind::Paired),
            other => Err(Error::parse(0, format!("unknown pattern kind `{other}`"))),
        }
    }
}

/// Permitted nonzero positions of the `d x s` gain, sorted row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    d: usize,
    s: usize,
    entries: Vec<(usize, usize)>,
}

impl SparsityPattern {
    pub fn new(d: usize, s: usize, mut entries: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(r, c)) = entries.iter().find(|&&(r, c)| r >= d || c >= s) {
            return Err(Error::Dimension(format!(
                "pattern entry ({r}, {c}) outside {d}x{s}"
            )));
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(SparsityPattern { d, s, entries })
    }

    pub fn dense(d: usize, s: usize) -> Self {
        let entries = (0..d).flat_map(|r| (0..s).map(move |c| (r, c))).collect();
        SparsityPattern { d, s, entries }
    }

    /// Phase-matched pattern from the placement's communication links: a DER
    /// hearing a sensor may respond to both its magnitude and angle errors
    /// with both reactive and real power.
    pub fn from_placement(p: &Placement) -> Self {
        Self::from_links(p, PatternKind::Full)
    }

    /// Phase-matched pattern over the placement's links with the given coupling.
    pub fn from_links(p: &Placement, kind: PatternKind) -> Self {
        let ph = p.phases();
        let ders = p.der_nodes();
        let sensors = p.sensor_nodes();
        let (dh, sh) = (ders.len() * ph, sensors.len() * ph);
        let mut entries = Vec::new();
        for (der, sensor) in p.links() {
            let k = ders
                .iter()
                .position(|&n| n == der)
                .expect("link DER is sited");
            let j = sensors
                .iter()
                .position(|&n| n == sensor)
                .expect("link sensor is sited");
            for a in 0..ph {
                let row = k * ph + a;
                let col = j * ph + a;
                match kind {
                    PatternKind::Full => entries.extend([
                        (row, col),
                        (row, sh + col),
                        (dh + row, col),
                        (dh + row, sh + col),
                    ]),
                    PatternKind::Paired => entries.extend([(row, col), (dh + row, sh + col)]),
                }
            }
        }
        SparsityPattern::new(2 * dh, 2 * sh, entries).expect("indices in range")
    }

    /// Every DER's reactive power responds to every same-phase sensor
    /// magnitude, ignoring links: the all-to-all volt-var benchmark.
    pub fn reactive_magnitude(p: &Placement) -> Self {
        let ph = p.phases();
        let (dh, sh) = (p.der_nodes().len() * ph, p.sensor_nodes().len() * ph);
        let entries = (0..dh)
            .flat_map(|r| {
                (0..sh)
                    .filter(move |c| c % ph == r % ph)
                    .map(move |c| (r, c))
            })
            .collect();
        SparsityPattern::new(2 * dh, 2 * sh, entries).expect("indices in range")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Number of free parameters `y`.
    pub fn y(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        self.entries.binary_search(&(row, col)).ok()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.index_of(row, col).is_some()
    }
}

/// Controller operating parameters `F` (`d x s`) restricted to a pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix {
    f: DMatrix<f64>,
    pattern: SparsityPattern,
}

impl GainMatrix {
    pub fn new(f: DMatrix<f64>, pattern: SparsityPattern) -> Result<Self> {
        if f.shape() != (pattern.d, pattern.s) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, pattern is {}x{}",
                f.shape(),
                pattern.d,
                pattern.s
            )));
        }
        for row in 0..f.nrows() {
            for col in 0..f.ncols() {
                let value = f[(row, col)];
                if value != 0.0 && !pattern.contains(row, col) {
                    return Err(Error::Sparsity { row, col, value });
                }
            }
        }
        Ok(GainMatrix { f, pattern })
    }

    pub fn zeros(pattern: SparsityPattern) -> Self {
        GainMatrix {
            f: DMatrix::zeros(pattern.d, pattern.s),
            pattern,
        }
    }

    pub fn from_packed(pattern: SparsityPattern, values: &[f64]) -> Result<Self> {
        if values.len() != pattern.y() {
            return Err(Error::Dimension(format!(
                "{} packed values for {} pattern entries",
                values.len(),
                pattern.y()
            )));
        }
        let mut f = DMatrix::zeros(pattern.d, pattern.s);
        for (&(r, c), &v) in pattern.entries.iter().zip(values) {
            f[(r, c)] = v;
        }
        Ok(GainMatrix { f, pattern })
    }

    pub fn packed(&self) -> Vec<f64> {
        self.pattern.entries.iter().map(|&rc| self.f[rc]).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GainMatrix {
            f: &self.f * factor,
            pattern: self.pattern.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoop {
    /// `H = B F C`, `2N x 2N`.
    pub h: DMatrix<f64>,
    /// `H_bar = B_bar F_bar`, `s x s`.
    pub h_bar: DMatrix<f64>,
    /// `F_bar = F C_bar`.
    pub f_bar: DMatrix<f64>,
}

impl ClosedLoop {
    /// Wraps a bare `H_bar` (used for analysis of arbitrary matrices).
    pub fn from_h_bar(h_bar: DMatrix<f64>) -> Self {
        ClosedLoop {
            h: h_bar.clone(),
            f_bar: DMatrix::zeros(0, 0),
            h_bar,
        }
    }
}

pub fn closed_loop(ss: &StateSpace, gain: &GainMatrix) -> Result<ClosedLoop> {
    let f = gain.matrix();
    if f.shape() != (ss.d(), ss.s()) {
        return Err(Error::Dimension(format!(
            "gain is {:?}, model needs {}x{}",
            f.shape(),
            ss.d(),
            ss.s()
        )));
    }
    let red = ss.reduced()?;
    let h = &ss.b * f * &ss.c;
    let f_bar = f * &red.c_bar;
    let h_bar = &red.b_bar * &f_bar;
    Ok(ClosedLoop { h, h_bar, f_bar })
}

/// `[B | AB | ... | A^(k-1) B]` with `k` the state dimension.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.nrows();
    let mut blocks = Vec::with_capacity(k);
    let mut cur = b.clone();
    for _ in 0..k {
        blocks.push(cur.clone());
        cur = a * cur;
    }
    DMatrix::from_columns(
        &blocks
            .iter()
            .flat_map(|m| m.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
}

/// `[C; CA; ...; CA^(k-1)]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Numerical rank via singular values relative to the largest one.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_impedance_matrices, parse_feeder};
    use crate::placement::Site;

    fn one_node() -> StateSpace {
        let net = parse_feeder("edge 0 1 0.1 0.2").unwrap();
        let mats = build_impedance_matrices(&net);
        build_open_loop(&mats, &Placement::colocated(1, 1, &[1]).unwrap()).unwrap()
    }

    #[test]
    fn single_node_input_matrix() {
        let ss = one_node();
        let expect = DMatrix::from_row_slice(2, 2, &[0.4, 0.2, -0.1, 0.2]);
        assert!((&ss.b - expect).abs().max() < 1e-15);
        assert_eq!(ss.a, DMatrix::identity(2, 2));
    }

    #[test]
    fn no_ders_means_no_inputs() {
        let net = parse_feeder("edge 0 1 0.1 0.2\nedge 1 2 0.1 0.2").unwrap();
        let mats = build_impedance_matrices(&net);
        let ss = build_open_loop(&mats, &Placement::new(2, 1, &[]).unwrap()).unwrap();
        assert_eq!(ss.b.shape(), (4, 0));
        assert_eq!(ss.c.shape(), (0, 4));
    }

    #[test]
    fn three_node_chain_dimensions() {
        let net = parse_feeder("edge 0 1 0.1 0.2\nedge 1 2 0.2 0.1\nedge 2 3 0.3 0.3").unwrap();
        let mats = build_impedance_matrices(&net);
        let sites = [
            Site {
                node: 1,
                der: true,
                sensor: false,
            },
            Site {
                node: 3,
                der: true,
                sensor: true,
            },
        ];
        let ss = build_open_loop(&mats, &Placement::new(3, 1, &sites).unwrap()).unwrap();
        assert_eq!(ss.b.shape(), (6, 4));
        assert_eq!(ss.c.shape(), (2, 6));
        assert_eq!(ss.c[(0, 2)], 1.0);
        assert_eq!(ss.c[(1, 5)], 1.0);
        assert_eq!(ss.c.sum(), 2.0);
        // Direct assembly from R0/X0 columns 1 and 3.
        for (col, node) in [(0usize, 1usize), (1, 3)] {
            for row in 0..3 {
                assert_eq!(ss.b[(row, col)], mats.x0[(row, node - 1)]);
                assert_eq!(ss.b[(row, 2 + col)], mats.r0[(row, node - 1)]);
                assert_eq!(ss.b[(3 + row, col)], -0.5 * mats.r0[(row, node - 1)]);
                assert_eq!(ss.b[(3 + row, 2 + col)], 0.5 * mats.x0[(row, node - 1)]);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = parse_feeder("edge 0 1 0.1 0.2").unwrap();
        let mats = build_impedance_matrices(&net);
        let p = Placement::colocated(2, 1, &[1]).unwrap();
        assert!(matches!(
            build_open_loop(&mats, &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn reduce_requires_sensor_der_assumption() {
        let net = parse_feeder("edge 0 1 0.1 0.2\nedge 1 2 0.1 0.2").unwrap();
        let mats = build_impedance_matrices(&net);
        let sites = [
            Site {
                node: 1,
                der: true,
                sensor: false,
            },
            Site {
                node: 2,
                der: false,
                sensor: true,
            },
        ];
        let ss = build_open_loop(&mats, &Placement::new(2, 1, &sites).unwrap()).unwrap();
        assert!(matches!(reduce(&ss), Err(Error::Assumption(_))));
    }

    #[test]
    fn colocated_reduction_keeps_sensor_rows() {
        let net = parse_feeder("edge 0 1 0.1 0.2\nedge 1 2 0.1 0.2").unwrap();
        let mats = build_impedance_matrices(&net);
        let ss = build_open_loop(&mats, &Placement::colocated(2, 1, &[2]).unwrap()).unwrap();
        let red = reduce(&ss).unwrap().reduced.unwrap();
        assert_eq!(red.b_bar.row(0), ss.b.row(1));
        assert_eq!(red.b_bar.row(1), ss.b.row(3));
        assert_eq!(red.c_bar, DMatrix::identity(2, 2));
    }

    #[test]
    fn full_placement_reduction_is_identity() {
        let net = parse_feeder("edge 0 1 0.1 0.2\nedge 1 2 0.1 0.2\nedge 1 3 0.2 0.2").unwrap();
        let mats = build_impedance_matrices(&net);
        let ss = build_open_loop(&mats, &Placement::colocated(3, 1, &[1, 2, 3]).unwrap()).unwrap();
        let red = ss.reduced().unwrap();
        assert_eq!(red.b_bar, ss.b);
        assert_eq!(ss.s(), 6);
    }

    #[test]
    fn zero_gain_and_diagonal_gain() {
        let ss = one_node();
        let pattern = SparsityPattern::new(2, 2, vec![(0, 0), (1, 1)]).unwrap();
        let cl = closed_loop(&ss, &GainMatrix::zeros(pattern.clone())).unwrap();
        assert_eq!(cl.h, DMatrix::zeros(2, 2));

        let (fq, fp) = (0.7, 1.3);
        let gain = GainMatrix::from_packed(pattern, &[fq, fp]).unwrap();
        let cl = closed_loop(&ss, &gain).unwrap();
        let (r, x) = (0.2, 0.4);
        let expect = DMatrix::from_row_slice(2, 2, &[x * fq, r * fp, -r / 2.0 * fq, x / 2.0 * fp]);
        assert!((cl.h_bar - expect).abs().max() < 1e-15);
    }

    #[test]
    fn gain_outside_pattern_is_rejected() {
        let pattern = SparsityPattern::new(2, 2, vec![(0, 0)]).unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        assert!(matches!(
            GainMatrix::new(f, pattern.clone()),
            Err(Error::Sparsity { row: 1, col: 0, .. })
        ));
        assert!(GainMatrix::from_packed(pattern, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn placement_pattern_is_phase_matched() {
        let p = Placement::colocated(2, 3, &[1, 2])
            .unwrap()
            .with_links(vec![(1, 1), (2, 2)])
            .unwrap();
        let pattern = SparsityPattern::from_placement(&p);
        assert_eq!((pattern.d(), pattern.s()), (12, 12));
        assert_eq!(pattern.y(), 2 * 3 * 4);
        // DER node 2 phase b (row 4) hears sensor node 2 phase b magnitude (col 4).
        assert!(pattern.contains(4, 4));
        assert!(pattern.contains(4, 10));
        assert!(pattern.contains(10, 4));
        assert!(!pattern.contains(4, 5));
        assert!(!pattern.contains(0, 3));
    }

    #[test]
    fn reactive_magnitude_pattern_ignores_links() {
        let p = Placement::colocated(2, 3, &[1, 2])
            .unwrap()
            .with_links(vec![(1, 1), (2, 2)])
            .unwrap();
        let pattern = SparsityPattern::reactive_magnitude(&p);
        assert_eq!(pattern.y(), 12);
        assert!(pattern.contains(0, 3));
        assert!(!pattern.contains(0, 4));
        assert!(pattern.entries().iter().all(|&(r, c)| r < 6 && c < 6));
    }
}
