//! One function per subcommand. Reports carry no timestamps so identical
//! inputs give byte-identical JSON.

use gridstab::region::{
    build_polytope, chebyshev, parameter_ranges, sample_gain, slice, ChebyshevResult,
    OperatingRanges, ParameterPolytope, RangeMode,
};
use gridstab::sim::{
    adjustment_schedule, benchmark_gain, economics, metrics, off_angle_references, revenue_table,
    simulate, GainSchedule, MetricsReport, ReferenceSchedule, ServiceTotals, SimOptions, Trace,
    Truth,
};
use gridstab::stability::{report, rho_exact, stability_margin, StabilityReport};
use gridstab::sysbuild::{closed_loop, GainMatrix, SparsityPattern};
use serde::Serialize;

use crate::scenario::{GainPolicy, Model, Scenario};
use crate::svg;
use crate::CliError;

/// Extra files a command wants written next to its JSON report.
pub type Artifacts = Vec<(String, String)>;

#[derive(Clone, Debug, Serialize)]
pub struct BuildSummary {
    pub scenario: String,
    pub n: usize,
    pub phases: usize,
    pub node_phases: usize,
    pub d: usize,
    pub s: usize,
    pub y: usize,
    pub der_nodes: Vec<usize>,
    pub sensor_nodes: Vec<usize>,
    pub norm_r0: f64,
    pub norm_x0: f64,
    pub norm_b: f64,
    pub norm_b_bar: f64,
}

pub fn cmd_build(scn: &Scenario) -> Result<BuildSummary, CliError> {
    let m = Model::build(scn)?;
    let red = m.ss.reduced()?;
    Ok(BuildSummary {
        scenario: scn.label(),
        n: m.net.n(),
        phases: m.net.phases(),
        node_phases: m.net.dim(),
        d: m.ss.d(),
        s: m.ss.s(),
        y: m.pattern.y(),
        der_nodes: m.placement.der_nodes(),
        sensor_nodes: m.placement.sensor_nodes(),
        norm_r0: m.mats.r0.norm(),
        norm_x0: m.mats.x0.norm(),
        norm_b: m.ss.b.norm(),
        norm_b_bar: red.b_bar.norm(),
    })
}

/// Polytope, Chebyshev ball and ranges for the scenario's siting.
pub struct Region {
    pub poly: ParameterPolytope,
    pub cheb: ChebyshevResult,
    pub ranges: OperatingRanges,
}

pub fn region_of(m: &Model, eps: f64, mode: RangeMode) -> Result<Region, CliError> {
    let poly = build_polytope(&m.ss, &m.pattern, eps)?;
    let cheb = chebyshev(&poly)?;
    let ranges = parameter_ranges(&cheb, mode)?;
    Ok(Region { poly, cheb, ranges })
}

/// Gain chosen by `policy`; the benchmark uses its own dense pattern.
pub fn gain_for(m: &Model, scn: &Scenario, policy: GainPolicy) -> Result<GainMatrix, CliError> {
    match policy {
        GainPolicy::Zero => Ok(GainMatrix::zeros(m.pattern.clone())),
        GainPolicy::Benchmark => Ok(benchmark_gain(
            &m.ss,
            &SparsityPattern::reactive_magnitude(&m.placement),
        )?),
        other => {
            let region = region_of(m, scn.eps, scn.range_mode)?;
            let policy = other.sample_policy().expect("sampling policy");
            Ok(sample_gain(&region.ranges, &m.pattern, policy)?)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityOutput {
    pub scenario: String,
    pub gain_policy: GainPolicy,
    pub y: usize,
    pub gain: Vec<(usize, usize, f64)>,
    pub report: StabilityReport,
}

impl StabilityOutput {
    pub fn stable(&self) -> bool {
        self.report.eig_verdict
    }

    pub fn table(&self) -> String {
        let r = &self.report;
        let mut out = format!(
            "{}: policy {:?}, y = {}\n  exact: rho = {:.6} -> {}\n  discs: rho_hat = {:.6}, margin = {:.6} -> {}\n",
            self.scenario,
            self.gain_policy,
            self.y,
            r.rho_exact,
            if r.eig_verdict { "stable" } else { "unstable" },
            r.rho_hat,
            r.margin,
            if r.disc_verdict { "certified" } else { "not certified" },
        );
        out.push_str("  row   center    radius\n");
        for d in &r.discs {
            out.push_str(&format!(
                "  {:>3} {:>9.5} {:>9.5}\n",
                d.row, d.center, d.radius
            ));
        }
        out
    }
}

pub fn cmd_stability(scn: &Scenario) -> Result<StabilityOutput, CliError> {
    let m = Model::build(scn)?;
    let gain = gain_for(&m, scn, scn.gain_policy)?;
    let cl = closed_loop(&m.ss, &gain)?;
    let f = gain.matrix();
    Ok(StabilityOutput {
        scenario: scn.label(),
        gain_policy: scn.gain_policy,
        y: gain.pattern().y(),
        gain: gain
            .pattern()
            .entries()
            .iter()
            .map(|&(r, c)| (r, c, f[(r, c)]))
            .collect(),
        report: report(&cl, scn.eps)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionOutput {
    pub scenario: String,
    pub y: usize,
    pub rows: usize,
    pub pruned_groups: usize,
    pub eps: f64,
    pub radius: f64,
    pub center: Vec<f64>,
    pub active_rows: Vec<usize>,
    pub lp_iterations: usize,
    pub range_mode: RangeMode,
    pub width: f64,
    pub intervals: Vec<(f64, f64)>,
    /// Spectral radius of the closed loop at the center gain.
    pub center_rho: f64,
    pub center_margin: f64,
    #[serde(skip)]
    pub artifacts: Artifacts,
}

pub fn cmd_region(scn: &Scenario, with_svg: bool) -> Result<RegionOutput, CliError> {
    let m = Model::build(scn)?;
    let region = region_of(&m, scn.eps, scn.range_mode)?;
    let center = GainMatrix::from_packed(m.pattern.clone(), &region.cheb.center)?;
    let cl = closed_loop(&m.ss, &center)?;
    let mut artifacts = vec![("polytope.csv".to_string(), region.poly.to_csv())];
    if with_svg && m.pattern.y() >= 2 {
        let sl = slice(
            &region.poly,
            &region.cheb,
            scn.slice_dims,
            2.0 * region.cheb.radius.max(1e-6),
            121,
        )?;
        artifacts.push((
            "slice.svg".into(),
            svg::slice(&sl, &region.cheb, &region.ranges),
        ));
    }
    Ok(RegionOutput {
        scenario: scn.label(),
        y: region.poly.y(),
        rows: region.poly.rows(),
        pruned_groups: region.poly.pruned_groups,
        eps: scn.eps,
        radius: region.cheb.radius,
        center_rho: rho_exact(&cl.h_bar)?,
        center_margin: stability_margin(&cl).0,
        center: region.cheb.center,
        active_rows: region.cheb.active,
        lp_iterations: region.cheb.lp_iterations,
        range_mode: region.ranges.mode,
        width: region.ranges.width,
        intervals: region.ranges.intervals,
        artifacts,
    })
}

/// Default references, with the angle optionally pinned by the scenario.
pub fn references(
    scn: &Scenario,
    m: &Model,
    profile: &gridstab::sim::Profile,
    truth: Truth,
) -> Result<ReferenceSchedule, CliError> {
    let mut refs = off_angle_references(&m.net, &m.placement, profile, truth, scn.k_on())?;
    if let Some(a) = scn.angle_reference {
        for row in refs.delta.iter_mut() {
            row.iter_mut().for_each(|x| *x = a);
        }
    }
    Ok(refs)
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateOutput {
    pub scenario: String,
    pub truth: Truth,
    pub gain_policy: GainPolicy,
    pub steps: usize,
    pub dt: f64,
    pub k_on: usize,
    pub saturated_steps: usize,
    pub controlled: MetricsReport,
    pub uncontrolled: MetricsReport,
    #[serde(skip)]
    pub trace: Option<Trace>,
    #[serde(skip)]
    pub trace_off: Option<Trace>,
    #[serde(skip)]
    pub artifacts: Artifacts,
}

pub fn cmd_simulate(scn: &Scenario, with_svg: bool) -> Result<SimulateOutput, CliError> {
    let m = Model::build(scn)?;
    let profile = scn.profile(&m.net)?;
    let gain = gain_for(&m, scn, scn.gain_policy)?;
    let opts = SimOptions {
        truth: scn.truth,
        k_on: scn.k_on(),
        der_cap: scn.der_cap,
    };
    let refs = references(scn, &m, &profile, scn.truth)?;
    let on = simulate(
        &m.net,
        &m.placement,
        &GainSchedule::fixed(gain.clone()),
        &profile,
        &refs,
        &opts,
    )?;
    let zero = GainMatrix::zeros(gain.pattern().clone());
    let off = simulate(
        &m.net,
        &m.placement,
        &GainSchedule::fixed(zero),
        &profile,
        &refs,
        &opts,
    )?;
    let mo = scn.metrics_options();
    let controlled = metrics(&on, &mo);
    let uncontrolled = metrics(&off, &mo);
    let mut artifacts = vec![
        ("profile.csv".to_string(), profile.to_csv()),
        ("trace.csv".to_string(), on.to_csv()),
        ("trace_off.csv".to_string(), off.to_csv()),
    ];
    if with_svg {
        artifacts.push((
            "envelope.svg".into(),
            svg::envelope(&on, &controlled, &uncontrolled, &mo),
        ));
    }
    Ok(SimulateOutput {
        scenario: scn.label(),
        truth: scn.truth,
        gain_policy: scn.gain_policy,
        steps: on.steps(),
        dt: on.dt,
        k_on: on.k_on,
        saturated_steps: on.saturated_steps,
        controlled,
        uncontrolled,
        trace: Some(on),
        trace_off: Some(off),
        artifacts,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EconomicsOutput {
    pub scenario: String,
    pub truth: Truth,
    pub range_mode: RangeMode,
    pub fixed: ServiceTotals,
    pub adjusted: ServiceTotals,
    /// Adjusted minus fixed total.
    pub gain_from_adjustment: f64,
    #[serde(skip)]
    pub table: String,
    #[serde(skip)]
    pub traces: Option<(Trace, Trace, Trace)>,
    #[serde(skip)]
    pub artifacts: Artifacts,
}

pub fn cmd_economics(scn: &Scenario) -> Result<EconomicsOutput, CliError> {
    let m = Model::build(scn)?;
    let tariff = scn.tariff()?;
    let profile = scn.profile(&m.net)?;
    let region = region_of(&m, scn.eps, scn.range_mode)?;
    let mid = sample_gain(
        &region.ranges,
        &m.pattern,
        gridstab::region::SamplePolicy::Midpoint,
    )?;
    let schedule = adjustment_schedule(
        &region.ranges,
        &m.pattern,
        &tariff,
        profile.start,
        profile.dt,
        profile.steps(),
    )?;
    let opts = SimOptions {
        truth: scn.truth,
        k_on: scn.k_on(),
        der_cap: scn.der_cap,
    };
    let refs = references(scn, &m, &profile, scn.truth)?;
    let run = |g: &GainSchedule| simulate(&m.net, &m.placement, g, &profile, &refs, &opts);
    let off = run(&GainSchedule::fixed(GainMatrix::zeros(m.pattern.clone())))?;
    let fixed_trace = run(&GainSchedule::fixed(mid))?;
    let adjusted_trace = run(&schedule)?;
    let fixed = economics(&fixed_trace, &off, &tariff)?;
    let adjusted = economics(&adjusted_trace, &off, &tariff)?;
    let table = revenue_table(&fixed, &adjusted);
    let artifacts = vec![
        ("revenue.txt".to_string(), table.clone()),
        ("trace_fixed.csv".to_string(), fixed_trace.to_csv()),
        ("trace_adjusted.csv".to_string(), adjusted_trace.to_csv()),
        ("trace_off.csv".to_string(), off.to_csv()),
    ];
    Ok(EconomicsOutput {
        scenario: scn.label(),
        truth: scn.truth,
        range_mode: scn.range_mode,
        gain_from_adjustment: adjusted.total - fixed.total,
        fixed,
        adjusted,
        table,
        traces: Some((fixed_trace, adjusted_trace, off)),
        artifacts,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SitingRow {
    pub siting: String,
    pub d: usize,
    pub s: usize,
    pub y: usize,
    pub rows: Option<usize>,
    pub radius: Option<f64>,
    pub center_rho: Option<f64>,
    pub center_margin: Option<f64>,
    pub benchmark_rho: Option<f64>,
    pub benchmark_margin: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SiteScanOutput {
    pub scenario: String,
    pub eps: f64,
    pub sitings: Vec<SitingRow>,
}

impl SiteScanOutput {
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:<28}{:>4}{:>4}{:>5}{:>9}{:>9}{:>9}{:>10}{:>10}\n",
            "siting", "d", "s", "y", "radius", "rho", "margin", "bench rho", "bench m"
        );
        for r in &self.sitings {
            out.push_str(&format!(
                "{:<28}{:>4}{:>4}{:>5}{:>9}{:>9}{:>9}{:>10}{:>10}\n",
                r.siting,
                r.d,
                r.s,
                r.y,
                fmt(r.radius),
                fmt(r.center_rho),
                fmt(r.center_margin),
                fmt(r.benchmark_rho),
                fmt(r.benchmark_margin)
            ));
        }
        out
    }
}

pub fn cmd_site_scan(scn: &Scenario) -> Result<SiteScanOutput, CliError> {
    let net = scn.network()?;
    let mut paths = vec![scn.placement.clone()];
    paths.extend(scn.candidates.iter().cloned());
    let mut sitings = Vec::new();
    for path in paths {
        let placement = scn.placement_at(&path, &net)?;
        let m = Model::with_placement(scn, net.clone(), placement)?;
        let bench = benchmark_gain(&m.ss, &SparsityPattern::reactive_magnitude(&m.placement))
            .and_then(|g| closed_loop(&m.ss, &g));
        let mut row = SitingRow {
            siting: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            d: m.ss.d(),
            s: m.ss.s(),
            y: m.pattern.y(),
            rows: None,
            radius: None,
            center_rho: None,
            center_margin: None,
            benchmark_rho: None,
            benchmark_margin: None,
            note: None,
        };
        if let Ok(cl) = bench {
            row.benchmark_rho = Some(rho_exact(&cl.h_bar)?);
            row.benchmark_margin = Some(stability_margin(&cl).0);
        }
        match build_polytope(&m.ss, &m.pattern, scn.eps).and_then(|p| {
            let c = chebyshev(&p)?;
            Ok((p.rows(), c))
        }) {
            Ok((rows, cheb)) => {
                let cl = closed_loop(
                    &m.ss,
                    &GainMatrix::from_packed(m.pattern.clone(), &cheb.center)?,
                )?;
                row.rows = Some(rows);
                row.radius = Some(cheb.radius);
                row.center_rho = Some(rho_exact(&cl.h_bar)?);
                row.center_margin = Some(stability_margin(&cl).0);
            }
            Err(e) => row.note = Some(e.to_string()),
        }
        sitings.push(row);
    }
    Ok(SiteScanOutput {
        scenario: scn.label(),
        eps: scn.eps,
        sitings,
    })
}
