//! Exact (eigenvalue) and Gershgorin-disc stability assessment, margins,
//! and siting analyses.
//!
//! The closed loop is `e[k+1] = (I - H_bar) e[k]`; it is stable when every
//! eigenvalue of `H_bar` lies in the open unit ball centred at `1 + 0j`.

use std::collections::BTreeSet;

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netmodel::{build_impedance_matrices, ImpedanceMatrices, RadialNetwork};
use crate::placement::Placement;
use crate::sysbuild::{build_open_loop, closed_loop, ClosedLoop, GainMatrix, SparsityPattern};

/// Default strictness margin for the open disc conditions.
pub const DEFAULT_EPS: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GershgorinDisc {
    pub row: usize,
    pub center: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Eigenvalue>,
    pub discs: Vec<GershgorinDisc>,
    pub eig_verdict: bool,
    pub disc_verdict: bool,
    pub eps: f64,
    pub margin: f64,
    pub rho_hat: f64,
    pub rho_exact: f64,
}

/// Eigenvalues of a real square matrix through the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{:?} is not square", m.shape())));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 1000 * m.nrows())
        .ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// `max |1 - lambda|` over the spectrum of `H_bar`: the spectral radius of `I - H_bar`.
pub fn rho_exact(h_bar: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(h_bar)?
        .iter()
        .map(|l| (Complex::new(1.0, 0.0) - l).norm())
        .fold(0.0, f64::max))
}

/// Exact verdict: every eigenvalue of `H_bar` within distance 1 of `1 + 0j`.
pub fn assess_eigen(cl: &ClosedLoop) -> Result<bool> {
    Ok(rho_exact(&cl.h_bar)? < 1.0)
}

pub fn gershgorin(cl: &ClosedLoop) -> Vec<GershgorinDisc> {
    discs_of(&cl.h_bar)
}

pub fn discs_of(m: &DMatrix<f64>) -> Vec<GershgorinDisc> {
    (0..m.nrows())
        .map(|i| GershgorinDisc {
            row: i,
            center: m[(i, i)],
            radius: (0..m.ncols())
                .filter(|&j| j != i)
                .map(|j| m[(i, j)].abs())
                .sum(),
        })
        .collect()
}

/// Disc conditions with strictness margin: `phi + gamma <= 2 - eps` and
/// `phi - gamma >= eps` on every row.
pub fn check_region(cl: &ClosedLoop, eps: f64) -> bool {
    discs_satisfy(&gershgorin(cl), eps)
}

pub fn discs_satisfy(discs: &[GershgorinDisc], eps: f64) -> bool {
    discs
        .iter()
        .all(|g| g.center + g.radius <= 2.0 - eps && g.center - g.radius >= eps)
}

/// `(m, rho_hat)`: `rho_hat` is the farthest point of the disc union from
/// `1 + 0j`, `m = 1 - rho_hat`. Centres are real, so the farthest point of
/// disc `i` is at distance `|phi_i - 1| + gamma_i`.
pub fn stability_margin(cl: &ClosedLoop) -> (f64, f64) {
    margin_of(&gershgorin(cl))
}

pub fn margin_of(discs: &[GershgorinDisc]) -> (f64, f64) {
    let rho_hat = discs
        .iter()
        .map(|g| (g.center - 1.0).abs() + g.radius)
        .fold(0.0, f64::max);
    (1.0 - rho_hat, rho_hat)
}

pub fn report(cl: &ClosedLoop, eps: f64) -> Result<StabilityReport> {
    let eig = eigenvalues(&cl.h_bar)?;
    let discs = gershgorin(cl);
    let rho_exact = eig
        .iter()
        .map(|l| (Complex::new(1.0, 0.0) - l).norm())
        .fold(0.0, f64::max);
    let (margin, rho_hat) = margin_of(&discs);
    Ok(StabilityReport {
        eigenvalues: eig
            .iter()
            .map(|l| Eigenvalue { re: l.re, im: l.im })
            .collect(),
        disc_verdict: discs_satisfy(&discs, eps),
        discs,
        eig_verdict: rho_exact < 1.0,
        eps,
        margin,
        rho_hat,
        rho_exact,
    })
}

/// Rebuilds the gain for another placement, keeping every entry whose
/// (DER node-phase, quantity) and (sensor node-phase, quantity) survive.
/// Positions new to `to` start at zero.
pub fn transfer_gain(gain: &GainMatrix, from: &Placement, to: &Placement) -> Result<GainMatrix> {
    let ph = from.phases();
    let key_maps = |p: &Placement| {
        let ders = p.der_nodes();
        let sensors = p.sensor_nodes();
        let rows: Vec<(usize, usize, usize)> = (0..2)
            .flat_map(|q| {
                ders.iter()
                    .flat_map(move |&n| (0..ph).map(move |a| (q, n, a)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let cols: Vec<(usize, usize, usize)> = (0..2)
            .flat_map(|q| {
                sensors
                    .iter()
                    .flat_map(move |&n| (0..ph).map(move |a| (q, n, a)))
                    .collect::<Vec<_>>()
            })
            .collect();
        (rows, cols)
    };
    let (from_rows, from_cols) = key_maps(from);
    let (to_rows, to_cols) = key_maps(to);
    let pattern = SparsityPattern::from_placement(to);
    let mut f = DMatrix::zeros(pattern.d(), pattern.s());
    for &(r, c) in pattern.entries() {
        let old_r = from_rows.iter().position(|k| *k == to_rows[r]);
        let old_c = from_cols.iter().position(|k| *k == to_cols[c]);
        if let (Some(or), Some(oc)) = (old_r, old_c) {
            if or < gain.matrix().nrows() && oc < gain.matrix().ncols() {
                f[(r, c)] = gain.matrix()[(or, oc)];
            }
        }
    }
    GainMatrix::new(f, pattern)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DepthPoint {
    pub scale: f64,
    /// `|Z_ii|` of the DSP node after scaling.
    pub z_self: f64,
    pub margin: f64,
    pub rho_hat: f64,
}

/// Margin of a fixed-gain DSP as the impedance of its substation path is
/// multiplied by each entry of `scales`.
pub fn depth_scan(
    net: &RadialNetwork,
    placement: &Placement,
    gain: &GainMatrix,
    scales: &[f64],
) -> Result<Vec<DepthPoint>> {
    let nodes = placement.sensor_nodes();
    let node = match nodes.as_slice() {
        [node] => *node,
        _ => {
            return Err(Error::Dimension(format!(
                "depth scan needs exactly one DSP, placement has sensors at {nodes:?}"
            )))
        }
    };
    scales
        .iter()
        .map(|&scale| {
            let scaled = net.with_path_scaled(node, scale);
            let mats = build_impedance_matrices(&scaled);
            let ss = build_open_loop(&mats, placement)?;
            let cl = closed_loop(&ss, gain)?;
            let (margin, rho_hat) = stability_margin(&cl);
            let k = mats.index(node, 0);
            Ok(DepthPoint {
                scale,
                z_self: Complex::new(mats.r0[(k, k)], mats.x0[(k, k)]).norm(),
                margin,
                rho_hat,
            })
        })
        .collect()
}

/// First scanned depth at which the margin is gone, if any.
pub fn depth_limit(points: &[DepthPoint]) -> Option<DepthPoint> {
    points.iter().copied().find(|p| p.margin <= 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RelevantImpedance {
    pub sensor: usize,
    pub der: usize,
    pub r: f64,
    pub x: f64,
}

/// Sensor-row / DER-column common-node impedances: the only impedances that
/// enter `H_bar`.
pub fn relevant_impedances(mats: &ImpedanceMatrices, p: &Placement) -> Vec<RelevantImpedance> {
    let mut out = Vec::new();
    for sensor in p.sensor_nodes() {
        for der in p.der_nodes() {
            let (i, j) = (mats.index(sensor, 0), mats.index(der, 0));
            out.push(RelevantImpedance {
                sensor,
                der,
                r: mats.r0[(i, j)],
                x: mats.x0[(i, j)],
            });
        }
    }
    out
}

/// Edges on at least one sensor-DER shared path. Edges outside this set do
/// not influence `H_bar`.
pub fn relevant_edges(net: &RadialNetwork, p: &Placement) -> BTreeSet<usize> {
    let mut edges = BTreeSet::new();
    for sensor in p.sensor_nodes() {
        for der in p.der_nodes() {
            edges.extend(net.path_edges(net.common_ancestor(sensor, der)));
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_feeder;

    fn cl(rows: usize, data: &[f64]) -> ClosedLoop {
        ClosedLoop::from_h_bar(DMatrix::from_row_slice(rows, rows, data))
    }

    #[test]
    fn identity_is_stable_with_full_margin() {
        let c = ClosedLoop::from_h_bar(DMatrix::identity(3, 3));
        assert!(assess_eigen(&c).unwrap());
        assert!(check_region(&c, 0.5));
        assert_eq!(stability_margin(&c), (1.0, 0.0));
    }

    #[test]
    fn scaled_identity_is_unstable() {
        let c = ClosedLoop::from_h_bar(DMatrix::identity(2, 2) * 2.5);
        assert!(!assess_eigen(&c).unwrap());
    }

    #[test]
    fn disc_definition() {
        let discs = gershgorin(&cl(2, &[1.0, 0.5, 0.25, 1.0]));
        assert_eq!(
            discs[0],
            GershgorinDisc {
                row: 0,
                center: 1.0,
                radius: 0.5
            }
        );
        assert_eq!(
            discs[1],
            GershgorinDisc {
                row: 1,
                center: 1.0,
                radius: 0.25
            }
        );
        let diag = gershgorin(&cl(2, &[0.3, 0.0, 0.0, 1.7]));
        assert!(diag.iter().all(|g| g.radius == 0.0));
        assert_eq!(diag[1].center, 1.7);
    }

    #[test]
    fn region_conditions() {
        // phi = 1.9, gamma = 0.2 violates phi + gamma < 2.
        assert!(!check_region(&cl(2, &[1.9, 0.2, 0.0, 1.0]), 0.0));
        assert!(!check_region(&cl(2, &[0.1, 0.2, 0.0, 1.0]), 0.0));
        assert!(check_region(&cl(2, &[1.0, 0.2, 0.3, 1.0]), 0.01));
    }

    #[test]
    fn margin_of_a_single_disc() {
        let (m, rho) = stability_margin(&cl(2, &[0.5, 0.2, 0.0, 1.0]));
        assert!((rho - 0.7).abs() < 1e-15);
        assert!((m - 0.3).abs() < 1e-15);
    }

    #[test]
    fn colocated_two_by_two_matches_closed_form() {
        // H_bar = [[X fq, R fp], [-R/2 fq, X/2 fp]], R = 0.2, X = 0.4, fq = fp = 0.3.
        let (r, x, f): (f64, f64, f64) = (0.2, 0.4, 0.3);
        let h = [x * f, r * f, -r / 2.0 * f, x / 2.0 * f];
        let tr = h[0] + h[3];
        let det = h[0] * h[3] - h[1] * h[2];
        let disc = tr * tr - 4.0 * det;
        // Complex pair: |1 - lambda|^2 = (1 - tr/2)^2 + (-disc)/4.
        assert!(disc < 0.0);
        let rho = ((1.0 - tr / 2.0).powi(2) - disc / 4.0).sqrt();
        let c = cl(2, &h);
        assert!((rho_exact(&c.h_bar).unwrap() - rho).abs() < 1e-12);
        assert_eq!(assess_eigen(&c).unwrap(), rho < 1.0);
        assert!(assess_eigen(&c).unwrap());
    }

    #[test]
    fn report_fields_are_consistent() {
        let rep = report(&cl(2, &[0.8, 0.1, -0.2, 0.9]), DEFAULT_EPS).unwrap();
        assert!(rep.disc_verdict && rep.eig_verdict);
        assert_eq!(rep.margin + rep.rho_hat, 1.0);
        assert!(rep.rho_exact <= rep.rho_hat + 1e-12);
        let json = serde_json::to_value(&rep).unwrap();
        for key in [
            "eigenvalues",
            "discs",
            "eig_verdict",
            "disc_verdict",
            "margin",
            "rho_hat",
            "rho_exact",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn nonfinite_matrix_reports_eigen_failure() {
        let c = cl(2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(assess_eigen(&c), Err(Error::EigenFailure)));
    }

    #[test]
    fn colocated_single_dsp_has_one_relevant_pair() {
        let net = parse_feeder("edge 0 1 0.1 0.2\nedge 1 2 0.1 0.1").unwrap();
        let mats = build_impedance_matrices(&net);
        let p = Placement::colocated(2, 1, &[2]).unwrap();
        let rel = relevant_impedances(&mats, &p);
        assert_eq!(rel.len(), 1);
        assert_eq!((rel[0].sensor, rel[0].der), (2, 2));
        assert!((rel[0].r - 0.4).abs() < 1e-15);
    }

    #[test]
    fn two_sensors_two_ders_give_four_pairs() {
        // Sensors i = 2, k = 4 with DERs; remote DERs j = 3, l = 5.
        let net = parse_feeder(
            "edge 0 1 0.1 0.1\nedge 1 2 0.1 0.1\nedge 2 3 0.1 0.1\nedge 1 4 0.1 0.1\nedge 4 5 0.1 0.1\nedge 0 6 0.1 0.1",
        )
        .unwrap();
        let mats = build_impedance_matrices(&net);
        use crate::placement::Site;
        let sites = [
            Site {
                node: 2,
                der: true,
                sensor: true,
            },
            Site {
                node: 3,
                der: true,
                sensor: false,
            },
            Site {
                node: 4,
                der: true,
                sensor: true,
            },
            Site {
                node: 5,
                der: true,
                sensor: false,
            },
        ];
        let p = Placement::new(6, 1, &sites).unwrap();
        let rel = relevant_impedances(&mats, &p);
        assert_eq!(rel.len(), 8);
        let edges = relevant_edges(&net, &p);
        // The lateral to node 6 never matters.
        let lateral = net.parent_edge(6).unwrap();
        assert!(!edges.contains(&lateral));
    }
}
