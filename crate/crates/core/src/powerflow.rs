//! Backward/forward sweep AC power flow on a radial feeder.
//!
//! Injections follow the generation-positive convention. The substation
//! holds `sqrt(v0)` at the base angle plus, on three-phase feeders, the usual
//! 0/-120/+120 degree phase offsets. Reported angles are relative to each
//! phase's nominal offset so they are comparable with the linear model.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netmodel::RadialNetwork;

pub const SWEEP_TOL: f64 = 1e-8;
pub const SWEEP_MAX_ITER: usize = 200;

/// Squared magnitudes and angles per node-phase, indexed like the impedance matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Voltages {
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Precomputed complex series impedance per edge.
#[derive(Clone, Debug)]
pub struct Sweep {
    net: RadialNetwork,
    z: Vec<DMatrix<Complex<f64>>>,
    offsets: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Sweep {
    pub fn new(net: &RadialNetwork) -> Self {
        let ph = net.phases();
        let z = net
            .edges()
            .iter()
            .map(|e| {
                let (r, x) = e.impedance_block(ph);
                DMatrix::from_fn(ph, ph, |i, j| Complex::new(r[(i, j)], x[(i, j)]))
            })
            .collect();
        let offsets = if ph == 3 {
            vec![
                0.0,
                -2.0 * std::f64::consts::FRAC_PI_3,
                2.0 * std::f64::consts::FRAC_PI_3,
            ]
        } else {
            vec![0.0]
        };
        Sweep {
            net: net.clone(),
            z,
            offsets,
            tol: SWEEP_TOL,
            max_iter: SWEEP_MAX_ITER,
        }
    }

    /// Solves for node voltages given net injections `p`, `q` (length `n * phases`).
    pub fn solve(&self, p: &[f64], q: &[f64], step: usize) -> Result<Voltages> {
        let net = &self.net;
        let ph = net.phases();
        let n = net.n();
        if p.len() != n * ph || q.len() != n * ph {
            return Err(Error::Dimension(format!(
                "sweep needs {} injections, got {} and {}",
                n * ph,
                p.len(),
                q.len()
            )));
        }
        let mag0 = net.v0.sqrt();
        let source: Vec<Complex<f64>> = self
            .offsets
            .iter()
            .map(|off| Complex::from_polar(mag0, net.delta0 + off))
            .collect();
        // Node 0 is the substation; node i occupies rows (i-1)*ph.. in p and q.
        let mut volt: Vec<DVector<Complex<f64>>> = vec![DVector::from_column_slice(&source); n + 1];
        let order = net.bfs_order();
        let mut current: Vec<DVector<Complex<f64>>> = vec![DVector::zeros(ph); n + 1];
        let mut mismatch = f64::INFINITY;
        for _ in 0..self.max_iter {
            // Backward: branch current into each node = its load current plus its subtree's.
            for c in current.iter_mut() {
                c.fill(Complex::new(0.0, 0.0));
            }
            for &node in order.iter().rev() {
                if node == 0 {
                    continue;
                }
                for a in 0..ph {
                    let k = (node - 1) * ph + a;
                    let s = Complex::new(p[k], q[k]);
                    // Generation injects I = conj(S / V); the branch carries its negative.
                    current[node][a] -= (s / volt[node][a]).conj();
                }
                let parent = net.parent(node).expect("non-root node has a parent");
                if parent != 0 {
                    let child = current[node].clone();
                    current[parent] += child;
                }
            }
            // Forward: V_child = V_parent - Z J.
            mismatch = 0.0f64;
            for &node in order {
                if node == 0 {
                    continue;
                }
                let parent = net.parent(node).expect("non-root node has a parent");
                let edge = net.parent_edge(node).expect("non-root node has an edge");
                let upstream = if parent == 0 {
                    DVector::from_column_slice(&source)
                } else {
                    volt[parent].clone()
                };
                let next = upstream - &self.z[edge] * &current[node];
                for a in 0..ph {
                    mismatch = mismatch.max((next[a] - volt[node][a]).norm());
                }
                volt[node] = next;
            }
            if !mismatch.is_finite() {
                break;
            }
            if mismatch < self.tol {
                let mut v = Vec::with_capacity(n * ph);
                let mut delta = Vec::with_capacity(n * ph);
                for node in 1..=n {
                    for a in 0..ph {
                        let vv = volt[node][a];
                        v.push(vv.norm_sqr());
                        delta.push(wrap(vv.arg() - self.offsets[a]));
                    }
                }
                return Ok(Voltages { v, delta });
            }
        }
        Err(Error::PowerFlowDiverged { step, mismatch })
    }
}

/// Wraps an angle into `(-pi, pi]`.
fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_impedance_matrices, Edge};

    #[test]
    fn no_load_gives_flat_voltage() {
        let net = RadialNetwork::new(
            2,
            vec![Edge::new(0, 1, 0.01, 0.02), Edge::new(1, 2, 0.01, 0.02)],
            3,
        )
        .unwrap();
        let sol = Sweep::new(&net).solve(&[0.0; 6], &[0.0; 6], 0).unwrap();
        for (v, d) in sol.v.iter().zip(&sol.delta) {
            assert!((v - 1.0).abs() < 1e-12);
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn single_line_matches_closed_form() {
        // Two-bus: V1 = V0 - Z conj(S1/V1) with S1 = -(p + jq) load.
        let (r, x) = (0.02, 0.04);
        let net = RadialNetwork::new(1, vec![Edge::new(0, 1, r, x)], 1).unwrap();
        let (p, q) = (-0.5, -0.2);
        let sol = Sweep::new(&net).solve(&[p], &[q], 0).unwrap();
        let v1 = Complex::from_polar(sol.v[0].sqrt(), sol.delta[0]);
        let residual =
            Complex::new(1.0, 0.0) - Complex::new(r, x) * (-(Complex::new(p, q) / v1).conj()) - v1;
        assert!(residual.norm() < 1e-8);
    }

    #[test]
    fn small_injections_agree_with_linear_model() {
        let net = RadialNetwork::new(
            3,
            vec![
                Edge::new(0, 1, 0.01, 0.02),
                Edge::new(1, 2, 0.02, 0.01),
                Edge::new(1, 3, 0.01, 0.03),
            ],
            1,
        )
        .unwrap();
        let mats = build_impedance_matrices(&net);
        let p = [0.01, -0.02, 0.015];
        let q = [-0.01, 0.005, 0.01];
        let sol = Sweep::new(&net).solve(&p, &q, 0).unwrap();
        for i in 0..3 {
            let mut v_lin = 1.0;
            let mut d_lin = 0.0;
            for j in 0..3 {
                v_lin += mats.r0[(i, j)] * p[j] + mats.x0[(i, j)] * q[j];
                d_lin += 0.5 * mats.x0[(i, j)] * p[j] - 0.5 * mats.r0[(i, j)] * q[j];
            }
            assert!(
                (sol.v[i] - v_lin).abs() < 1e-4,
                "v {} vs {}",
                sol.v[i],
                v_lin
            );
            assert!((sol.delta[i] - d_lin).abs() < 1e-4);
        }
    }

    #[test]
    fn extreme_load_diverges() {
        let net = RadialNetwork::new(1, vec![Edge::new(0, 1, 0.5, 0.5)], 1).unwrap();
        let err = Sweep::new(&net).solve(&[-10.0], &[-10.0], 7).unwrap_err();
        assert!(matches!(err, Error::PowerFlowDiverged { step: 7, .. }));
    }
}
