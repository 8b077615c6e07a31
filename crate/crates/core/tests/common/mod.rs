//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use gridstab::netmodel::build_impedance_matrices;
use gridstab::netmodel::{Edge, RadialNetwork};
use gridstab::placement::{Placement, Site};
use gridstab::region::ParameterPolytope;
use gridstab::sysbuild::{
    build_open_loop, closed_loop, reduce, GainMatrix, SparsityPattern, StateSpace,
};
use nalgebra::Complex;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random single-phase tree on nodes `0..=n`, each node hung off an earlier one.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> RadialNetwork {
    let edges = (1..=n)
        .map(|i| {
            let parent = rng.gen_range(0..i);
            Edge::new(
                parent,
                i,
                rng.gen_range(0.005..0.05),
                rng.gen_range(0.005..0.05),
            )
        })
        .collect();
    RadialNetwork::new(n, edges, 1).expect("generated tree is valid")
}

/// Random placement with `pairs` colocated DER-sensor pairs plus up to
/// `extra_ders` DER-only nodes, so every sensor has a DER.
pub fn random_placement<R: Rng>(
    rng: &mut R,
    n: usize,
    pairs: usize,
    extra_ders: usize,
) -> Placement {
    let mut nodes: Vec<usize> = (1..=n).collect();
    nodes.shuffle(rng);
    let pairs = pairs.clamp(1, n);
    let extra = extra_ders.min(n - pairs);
    let mut sited: Vec<Site> = nodes[..pairs]
        .iter()
        .map(|&node| Site {
            node,
            der: true,
            sensor: true,
        })
        .collect();
    sited.extend(nodes[pairs..pairs + extra].iter().map(|&node| Site {
        node,
        der: true,
        sensor: false,
    }));
    Placement::new(n, 1, &sited).expect("generated placement is valid")
}

/// Gain with entries uniform in `[-scale, scale]` on the pattern.
pub fn random_gain<R: Rng>(rng: &mut R, pattern: &SparsityPattern, scale: f64) -> GainMatrix {
    let values: Vec<f64> = (0..pattern.y())
        .map(|_| rng.gen_range(-scale..=scale))
        .collect();
    GainMatrix::from_packed(pattern.clone(), &values).expect("packed length matches")
}

/// Random dense matrix with entries uniform in `[lo, hi]`.
pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(lo..=hi))
}

pub fn fixture(name: &str) -> String {
    // Resolves from either crate in the workspace.
    let path = format!("{}/../core/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// The bundled 123-node feeder with one of its placements, reduced and
/// paired with the full link pattern.
pub fn fixture_model(placement: &str) -> (RadialNetwork, Placement, StateSpace, SparsityPattern) {
    use gridstab::netmodel::parse_feeder;
    use gridstab::placement::parse_placement;
    use gridstab::sysbuild::PatternKind;
    let net = parse_feeder(&fixture("ieee123.feeder")).unwrap();
    let p = parse_placement(&fixture(&format!("{placement}.placement")), &net).unwrap();
    let ss = reduce(&build_open_loop(&build_impedance_matrices(&net), &p).unwrap()).unwrap();
    let pattern = SparsityPattern::from_links(&p, PatternKind::Full);
    (net, p, ss, pattern)
}

pub fn model(net: &gridstab::netmodel::RadialNetwork, p: &Placement) -> StateSpace {
    reduce(&build_open_loop(&build_impedance_matrices(net), p).unwrap()).unwrap()
}

/// Half the samples come from feeders (structured), half are dense random
/// matrices with dominant diagonals so that a fair share pass the disc test.
pub fn random_h_bar(seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    if seed % 2 == 0 {
        let n = rng.gen_range(2..=6);
        let net = random_tree(&mut rng, n);
        let pairs = rng.gen_range(1..=n.min(3));
        let p = random_placement(&mut rng, n, pairs, 1);
        let ss = model(&net, &p);
        let pattern = SparsityPattern::dense(ss.d(), ss.s());
        let gain = random_gain(&mut rng, &pattern, 20.0);
        closed_loop(&ss, &gain).unwrap().h_bar
    } else {
        let s = rng.gen_range(2..=6);
        let mut m = random_matrix(&mut rng, s, -0.3, 0.3);
        for i in 0..s {
            m[(i, i)] = rng.gen_range(0.0..2.0);
        }
        m
    }
}

/// Summation order inside the larger product can differ by a few ulps.
pub fn ulp_slack(m: f64) -> f64 {
    1e-12 * (1.0 + m.abs())
}

/// Placement where `node`'s DER hears only its own sensor and every other
/// DER hears every sensor.
pub fn isolating_links(p: &Placement, node: usize) -> Placement {
    let mut links = Vec::new();
    for d in p.der_nodes() {
        for s in p.sensor_nodes() {
            if d != node || s == node {
                links.push((d, s));
            }
        }
    }
    p.clone().with_links(links).unwrap()
}

/// Greedy nearest matching; returns the worst pairing distance.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("same length");
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

/// Bounded random polytope containing the origin: a box plus random cuts.
pub fn random_polytope<R: Rng>(rng: &mut R, y: usize, cuts: usize) -> ParameterPolytope {
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for j in 0..y {
        for sign in [1.0, -1.0] {
            let mut a = vec![0.0; y];
            a[j] = sign;
            rows.push(a);
            b.push(rng.gen_range(0.3..1.0));
        }
    }
    for _ in 0..cuts {
        let a: Vec<f64> = (0..y).map(|_| rng.gen_range(-2.0..2.0)).collect();
        b.push(rng.gen_range(0.05..1.0) * a.iter().map(|v| v * v).sum::<f64>().sqrt());
        rows.push(a);
    }
    ParameterPolytope::from_rows(&rows, b).unwrap()
}

/// Radius of the largest ball centered at `f` inside the polytope.
pub fn depth(poly: &ParameterPolytope, f: &[f64]) -> f64 {
    (0..poly.rows())
        .map(|k| {
            let row = poly.a.row(k);
            let af: f64 = row.iter().zip(f).map(|(a, x)| a * x).sum();
            (poly.b[k] - af) / row.norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Coarse-to-fine grid search for the deepest point. Each level keeps a
/// window of several cells around the best point, so the concave depth
/// function's maximizer stays inside until the spacing reaches `resolution`.
pub fn grid_oracle(poly: &ParameterPolytope, resolution: f64) -> f64 {
    let y = poly.y();
    let per_dim: usize = if y <= 2 { 41 } else { 13 };
    let mut center = vec![0.0; y];
    let mut half = 1.0;
    let mut best = depth(poly, &center);
    loop {
        let step = 2.0 * half / (per_dim - 1) as f64;
        let mut idx = vec![0usize; y];
        let mut best_pt = center.clone();
        loop {
            let pt: Vec<f64> = (0..y)
                .map(|j| center[j] - half + step * idx[j] as f64)
                .collect();
            let d = depth(poly, &pt);
            if d > best {
                best = d;
                best_pt = pt;
            }
            let mut j = 0;
            while j < y {
                idx[j] += 1;
                if idx[j] < per_dim {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == y {
                break;
            }
        }
        center = best_pt;
        if step <= resolution {
            return best;
        }
        half = (4.0 * step).min(half);
    }
}
