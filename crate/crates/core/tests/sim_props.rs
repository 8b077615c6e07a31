mod common;

use common::{fixture, fixture_model, rng};
use gridstab::region::{
    build_polytope, chebyshev, parameter_ranges, sample_gain, sample_uniform, RangeMode,
    SamplePolicy,
};
use gridstab::sim::{
    adjustment_schedule, economics, metrics, off_angle_references, parse_tariff, simulate,
    synth_profiles, GainSchedule, LoadShape, MetricsOptions, Profile, ProfileSpec,
    ReferenceSchedule, SimOptions, Truth,
};
use gridstab::stability::DEFAULT_EPS;
use gridstab::sysbuild::GainMatrix;

fn midday_spec(steps: usize) -> ProfileSpec {
    ProfileSpec {
        base_load: 0.0005,
        solar_peak: 0.07,
        pv_nodes: vec![24, 38, 23, 22],
        steps,
        ..ProfileSpec::default()
    }
}

fn ranges_for(placement: &str, mode: RangeMode) -> gridstab::region::OperatingRanges {
    let (_, _, ss, pattern) = fixture_model(placement);
    let cheb = chebyshev(&build_polytope(&ss, &pattern, DEFAULT_EPS).unwrap()).unwrap();
    parameter_ranges(&cheb, mode).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let (net, p, _, pattern) = fixture_model("deep_separated");
    let ranges = ranges_for("deep_separated", RangeMode::SafeHypercube);
    let gain = sample_gain(&ranges, &pattern, SamplePolicy::Midpoint).unwrap();
    let spec = ProfileSpec {
        noise: 0.05,
        ..midday_spec(60)
    };
    let run = || {
        let prof = synth_profiles(&net, &spec, 11);
        let refs = off_angle_references(&net, &p, &prof, Truth::Sweep, 12).unwrap();
        let opts = SimOptions {
            der_cap: Some(0.3),
            ..SimOptions::default()
        };
        simulate(
            &net,
            &p,
            &GainSchedule::fixed(gain.clone()),
            &prof,
            &refs,
            &opts,
        )
        .unwrap()
        .to_csv()
    };
    assert_eq!(run(), run());
}

#[test]
fn gain_far_outside_the_region_oscillates() {
    let (net, p, _, pattern) = fixture_model("deep_separated");
    let ranges = ranges_for("deep_separated", RangeMode::SafeHypercube);
    let mid = sample_gain(&ranges, &pattern, SamplePolicy::Midpoint).unwrap();
    let wild = mid.scaled(20.0);
    let prof = synth_profiles(&net, &midday_spec(80), 1);
    let refs = off_angle_references(&net, &p, &prof, Truth::Linear, 12).unwrap();
    let opts = SimOptions {
        truth: Truth::Linear,
        ..SimOptions::default()
    };
    let tame = simulate(&net, &p, &GainSchedule::fixed(mid), &prof, &refs, &opts).unwrap();
    let trace = simulate(&net, &p, &GainSchedule::fixed(wild), &prof, &refs, &opts).unwrap();
    let last = trace.steps() - 1;
    assert!(trace.error_norm(last) > 1e3 * trace.error_norm(12));
    // The error alternates in sign from one step to the next.
    let flips = (13..last)
        .filter(|&k| trace.e[k][0] * trace.e[k + 1][0] < 0.0)
        .count();
    assert!(flips > (last - 13) / 2, "{flips} sign flips");
    let mo = MetricsOptions::default();
    assert!(
        metrics(&trace, &mo).violation_share > 10.0 * metrics(&tame, &mo).violation_share.max(1e-3)
    );
}

#[test]
fn heavy_solar_overvoltage_without_control() {
    let (net, p, _, pattern) = fixture_model("deep_separated");
    let spec = ProfileSpec {
        penetration: 1.25,
        ..midday_spec(40)
    };
    let prof = synth_profiles(&net, &spec, 1);
    let refs = off_angle_references(&net, &p, &prof, Truth::Sweep, 12).unwrap();
    let off = simulate(
        &net,
        &p,
        &GainSchedule::fixed(GainMatrix::zeros(pattern)),
        &prof,
        &refs,
        &SimOptions::default(),
    )
    .unwrap();
    let m = metrics(&off, &MetricsOptions::default());
    assert!(m.violation_share > 0.99, "share {}", m.violation_share);
    assert!(m.envelope_max.iter().all(|&v| v > 1.05));
}

#[test]
fn region_gains_drive_the_linear_error_to_zero() {
    let (net, p, ss, pattern) = fixture_model("deep_separated");
    assert_eq!(ss.s(), 12);
    let ranges = ranges_for("deep_separated", RangeMode::SafeHypercube);
    let k_on = 12;
    let prof = Profile::flat(net.n(), net.phases(), k_on + 200, 0.0004, 0.0);
    let refs = off_angle_references(&net, &p, &prof, Truth::Linear, k_on).unwrap();
    let refs = ReferenceSchedule {
        v: vec![vec![1.0; refs.v[0].len()]; prof.steps()],
        ..refs
    };
    let opts = SimOptions {
        truth: Truth::Linear,
        k_on,
        der_cap: None,
    };
    let mut r = rng(2);
    for _ in 0..25 {
        let gain = sample_uniform(&ranges, &pattern, &mut r).unwrap();
        let t = simulate(&net, &p, &GainSchedule::fixed(gain), &prof, &refs, &opts).unwrap();
        let e0 = t.error_norm(k_on);
        assert!(e0 > 0.0);
        assert!(t.error_norm(t.steps() - 1) <= 1e-6 * e0);
    }
}

#[test]
fn adjustment_schedule_switches_at_tariff_windows() {
    let (_, _, _, pattern) = fixture_model("deep_separated");
    let ranges = ranges_for("deep_separated", RangeMode::SafeHypercube);
    let tariff = parse_tariff(&fixture("tariff.csv")).unwrap();
    let sched = adjustment_schedule(&ranges, &pattern, &tariff, 0.0, 30.0, 2880).unwrap();
    let starts: Vec<usize> = sched.segments().iter().map(|(k, _)| *k).collect();
    assert_eq!(starts, vec![0, 1200, 1800, 2040, 2520]);
    let (hd, hs) = (pattern.d() / 2, pattern.s() / 2);
    let check = |k: usize, q_hi: bool, p_lo: bool| {
        let g = sched.at(k);
        let f = g.matrix();
        for (&(r, c), &(lo, hi)) in pattern.entries().iter().zip(&ranges.intervals) {
            let want = if c < hs && r < hd && q_hi {
                hi
            } else if c < hs && r >= hd && p_lo {
                lo
            } else {
                0.5 * (lo + hi)
            };
            assert_eq!(f[(r, c)], want, "step {k} entry ({r}, {c})");
        }
    };
    check(0, false, false);
    check(1300, true, false);
    check(1900, false, false);
    check(2100, false, true);
    check(2600, false, false);
}

/// Per-step prices read straight from the tariff CSV, without the library parser.
fn spreadsheet_price(tariff_csv: &str, service: &str, t: f64) -> (f64, bool) {
    let mut off = 0.0;
    for line in tariff_csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] != service {
            continue;
        }
        let clock = |s: &str| {
            f64::from(s[..2].parse::<u32>().unwrap() * 3600 + s[2..].parse::<u32>().unwrap() * 60)
        };
        let (a, b) = (clock(f[1]), clock(f[2]));
        let price: f64 = f[3].parse().unwrap();
        if a == 0.0 && b == 86400.0 {
            off = price;
        } else if a <= t && t < b {
            return (price, true);
        }
    }
    (off, false)
}

#[test]
fn economics_matches_recomputation_from_trace_csv() {
    let (net, p, _, pattern) = fixture_model("deep_separated");
    let ranges = ranges_for("deep_separated", RangeMode::SafeHypercube);
    let tariff_csv = fixture("tariff.csv");
    let tariff = parse_tariff(&tariff_csv).unwrap();
    let spec = ProfileSpec {
        load_shape: LoadShape::Commercial,
        base_load: 0.002,
        solar_peak: 0.08,
        noise: 0.02,
        start: 9.5 * 3600.0,
        dt: 60.0,
        ..midday_spec(720)
    };
    let prof = synth_profiles(&net, &spec, 7);
    let opts = SimOptions {
        k_on: 1,
        der_cap: Some(0.3),
        ..SimOptions::default()
    };
    let refs = off_angle_references(&net, &p, &prof, Truth::Sweep, 1).unwrap();
    let sched = adjustment_schedule(
        &ranges,
        &pattern,
        &tariff,
        prof.start,
        prof.dt,
        prof.steps(),
    )
    .unwrap();
    let on = simulate(&net, &p, &sched, &prof, &refs, &opts).unwrap();
    let off = simulate(
        &net,
        &p,
        &GainSchedule::fixed(GainMatrix::zeros(pattern)),
        &prof,
        &refs,
        &opts,
    )
    .unwrap();
    let totals = economics(&on, &off, &tariff).unwrap();

    let rows = |csv: String| -> Vec<Vec<f64>> {
        csv.lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let (on_rows, off_rows) = (rows(on.to_csv()), rows(off.to_csv()));
    assert_eq!(on_rows.len(), off_rows.len());
    let hours = prof.dt / 3600.0;
    let mut cells = [0.0f64; 8];
    for (a, b) in on_rows.iter().zip(&off_rows) {
        let t = a[0];
        let effort = ((b[3].sqrt() - 1.0).abs() - (a[3].sqrt() - 1.0).abs()) * hours;
        let (price, peak) = spreadsheet_price(&tariff_csv, "regulation", t);
        let i = if peak { 2 } else { 0 };
        cells[i] += effort;
        cells[i + 1] += effort * price;
        let kwh = a[5] * prof.base_kva * hours;
        let (price, peak) = spreadsheet_price(&tariff_csv, "energy", t);
        let i = if peak { 6 } else { 4 };
        cells[i] += kwh;
        cells[i + 1] += kwh * price;
    }
    let total = cells[1] + cells[3] + cells[5] + cells[7];
    for ((label, lib), mine) in totals.rows().iter().zip(cells.iter().chain([&total])) {
        assert!((lib - mine).abs() <= 1e-6, "{label}: {lib} vs {mine}");
    }
    assert!(totals.regulation_effort_on_peak != 0.0 && totals.energy_on_peak_kwh != 0.0);
}
