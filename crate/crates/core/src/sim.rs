//! Quasi-steady-state closed-loop simulation, metrics and service accounting.
//!
//! At each step the truth model maps net injections to voltages, sensors
//! report tracking errors, and from `k_on` on the controller integrates
//! `u = -F y` into the DER set points, which take effect on the next step.

use std::fmt::Write as _;

use log::debug;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{build_impedance_matrices, ImpedanceMatrices, RadialNetwork};
use crate::placement::Placement;
use crate::powerflow::{Sweep, Voltages};
use crate::region::OperatingRanges;
use crate::sysbuild::{GainMatrix, SparsityPattern, StateSpace};

pub const DEFAULT_DT: f64 = 5.0;
pub const DEFAULT_K_ON: usize = 12;
const DAY: f64 = 86_400.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    Linear,
    Sweep,
}

impl std::str::FromStr for Truth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Truth::Linear),
            "sweep" => Ok(Truth::Sweep),
            other => Err(Error::parse(0, format!("unknown truth model `{other}`"))),
        }
    }
}

/// Uncontrolled net injections per step and node-phase (generation positive, p.u.).
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub n: usize,
    pub phases: usize,
    /// Step length in seconds.
    pub dt: f64,
    /// Time of step 0 in seconds since midnight.
    pub start: f64,
    /// Power base used to convert p.u. energy to kWh.
    pub base_kva: f64,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl Profile {
    pub fn flat(n: usize, phases: usize, steps: usize, p: f64, q: f64) -> Self {
        Profile {
            n,
            phases,
            dt: DEFAULT_DT,
            start: 0.0,
            base_kva: 1000.0,
            p: vec![vec![p; n * phases]; steps],
            q: vec![vec![q; n * phases]; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.p.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    fn validate(&self) -> Result<()> {
        let w = self.n * self.phases;
        if self.q.len() != self.p.len() || self.p.iter().chain(&self.q).any(|row| row.len() != w) {
            return Err(Error::Dimension(format!(
                "profile series must all have {w} node-phases and equal length"
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Dimension("profile step must be positive".into()));
        }
        Ok(())
    }

    /// `t,node,phase,p,q` with one row per step and node-phase.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,node,phase,p,q\n");
        for k in 0..self.steps() {
            for node in 1..=self.n {
                for a in 0..self.phases {
                    let i = (node - 1) * self.phases + a;
                    let _ = writeln!(
                        out,
                        "{},{node},{a},{},{}",
                        self.time(k),
                        self.p[k][i],
                        self.q[k][i]
                    );
                }
            }
        }
        out
    }

    /// Parses the CSV layout of [`to_csv`](Self::to_csv). Missing node-phases
    /// default to zero; steps must be evenly spaced.
    pub fn from_csv(text: &str, n: usize, phases: usize, base_kva: f64) -> Result<Self> {
        let mut rows: Vec<(f64, usize, usize, f64, f64)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (ln == 0 && line.starts_with('t')) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::parse(ln + 1, "expected t,node,phase,p,q"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(ln + 1, format!("bad number `{s}`")))
            };
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(ln + 1, format!("bad index `{s}`")))
            };
            let (node, phase) = (int(f[1])?, int(f[2])?);
            if node == 0 || node > n || phase >= phases {
                return Err(Error::parse(
                    ln + 1,
                    format!("node-phase {node}/{phase} not in feeder"),
                ));
            }
            rows.push((num(f[0])?, node, phase, num(f[3])?, num(f[4])?));
        }
        let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        if times.is_empty() {
            return Err(Error::parse(0, "profile has no rows"));
        }
        let dt = if times.len() > 1 {
            times[1] - times[0]
        } else {
            DEFAULT_DT
        };
        for (k, t) in times.iter().enumerate() {
            if (t - (times[0] + k as f64 * dt)).abs() > 1e-6 {
                return Err(Error::parse(0, "profile times are not evenly spaced"));
            }
        }
        let w = n * phases;
        let mut prof = Profile {
            n,
            phases,
            dt,
            start: times[0],
            base_kva,
            p: vec![vec![0.0; w]; times.len()],
            q: vec![vec![0.0; w]; times.len()],
        };
        for (t, node, phase, p, q) in rows {
            let k = ((t - times[0]) / dt).round() as usize;
            let i = (node - 1) * phases + phase;
            prof.p[k][i] = p;
            prof.q[k][i] = q;
        }
        Ok(prof)
    }
}

/// Per-step references at sensor node-phases (in sensor order).
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSchedule {
    /// Squared magnitude references.
    pub v: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
}

impl ReferenceSchedule {
    pub fn constant(steps: usize, v: Vec<f64>, delta: Vec<f64>) -> Self {
        ReferenceSchedule {
            v: vec![v; steps],
            delta: vec![delta; steps],
        }
    }
}

/// Gains switched at given steps; the first segment must start at 0.
#[derive(Clone, Debug)]
pub struct GainSchedule {
    segments: Vec<(usize, GainMatrix)>,
}

impl GainSchedule {
    pub fn fixed(gain: GainMatrix) -> Self {
        GainSchedule {
            segments: vec![(0, gain)],
        }
    }

    pub fn new(mut segments: Vec<(usize, GainMatrix)>) -> Result<Self> {
        segments.sort_by_key(|s| s.0);
        if segments.first().map(|s| s.0) != Some(0) {
            return Err(Error::Dimension(
                "gain schedule must start at step 0".into(),
            ));
        }
        let shape = segments[0].1.matrix().shape();
        if segments.iter().any(|s| s.1.matrix().shape() != shape) {
            return Err(Error::Dimension("gain schedule mixes shapes".into()));
        }
        Ok(GainSchedule { segments })
    }

    pub fn at(&self, k: usize) -> &GainMatrix {
        let idx = self.segments.partition_point(|s| s.0 <= k);
        &self.segments[idx - 1].1
    }

    pub fn segments(&self) -> &[(usize, GainMatrix)] {
        &self.segments
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub truth: Truth,
    pub k_on: usize,
    /// Per-DER node-phase apparent-power limit on accumulated set points (p.u.).
    pub der_cap: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            truth: Truth::Sweep,
            k_on: DEFAULT_K_ON,
            der_cap: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub truth: Truth,
    pub k_on: usize,
    pub dt: f64,
    pub start: f64,
    pub base_kva: f64,
    pub n: usize,
    pub phases: usize,
    /// 0-based node-phase index of each DER set point, in input order.
    pub der_index: Vec<usize>,
    /// 0-based node-phase index of each sensed node-phase.
    pub sensor_index: Vec<usize>,
    pub v: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub p_hat: Vec<Vec<f64>>,
    pub q_hat: Vec<Vec<f64>>,
    /// Sensor tracking errors `[e_v; e_delta]`.
    pub e: Vec<Vec<f64>>,
    /// Steps where the apparent-power cap clipped at least one DER.
    pub saturated_steps: usize,
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.v.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    /// Voltage magnitudes (p.u.) at step `k`.
    pub fn magnitudes(&self, k: usize) -> Vec<f64> {
        self.v[k].iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn error_norm(&self, k: usize) -> f64 {
        self.e[k].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `t,node,phase,v,delta,p_hat,q_hat`; `v` is the squared magnitude and
    /// DER columns are zero at node-phases without a DER.
    pub fn to_csv(&self) -> String {
        let w = self.n * self.phases;
        let mut out = String::from("t,node,phase,v,delta,p_hat,q_hat\n");
        for k in 0..self.steps() {
            let mut p = vec![0.0; w];
            let mut q = vec![0.0; w];
            for (j, &i) in self.der_index.iter().enumerate() {
                p[i] = self.p_hat[k][j];
                q[i] = self.q_hat[k][j];
            }
            for node in 1..=self.n {
                for a in 0..self.phases {
                    let i = (node - 1) * self.phases + a;
                    let _ = writeln!(
                        out,
                        "{},{node},{a},{},{},{},{}",
                        self.time(k),
                        self.v[k][i],
                        self.delta[k][i],
                        p[i],
                        q[i]
                    );
                }
            }
        }
        out
    }
}

enum TruthModel {
    Linear(ImpedanceMatrices),
    Sweep(Sweep),
}

impl TruthModel {
    fn new(net: &RadialNetwork, truth: Truth) -> Self {
        match truth {
            Truth::Linear => TruthModel::Linear(build_impedance_matrices(net)),
            Truth::Sweep => TruthModel::Sweep(Sweep::new(net)),
        }
    }

    fn solve(&self, net: &RadialNetwork, p: &[f64], q: &[f64], step: usize) -> Result<Voltages> {
        match self {
            TruthModel::Linear(m) => {
                let pv = DVector::from_column_slice(p);
                let qv = DVector::from_column_slice(q);
                let v = &m.r0 * &pv + &m.x0 * &qv;
                let d = (&m.x0 * &pv - &m.r0 * &qv) * 0.5;
                Ok(Voltages {
                    v: v.iter().map(|x| x + net.v0).collect(),
                    delta: d.iter().map(|x| x + net.delta0).collect(),
                })
            }
            TruthModel::Sweep(s) => s.solve(p, q, step),
        }
    }
}

fn node_phase_indices(nodes: &[usize], phases: usize) -> Vec<usize> {
    nodes
        .iter()
        .flat_map(|&n| (0..phases).map(move |a| (n - 1) * phases + a))
        .collect()
}

fn check_inputs(net: &RadialNetwork, placement: &Placement, profile: &Profile) -> Result<()> {
    profile.validate()?;
    if profile.n != net.n() || profile.phases != net.phases() || placement.width() != net.dim() {
        return Err(Error::Dimension(format!(
            "feeder has {} nodes x {} phases, profile {} x {}, placement width {}",
            net.n(),
            net.phases(),
            profile.n,
            profile.phases,
            placement.width()
        )));
    }
    Ok(())
}

/// Default references: unit squared magnitude and the controller-off angle at `k_on`.
pub fn off_angle_references(
    net: &RadialNetwork,
    placement: &Placement,
    profile: &Profile,
    truth: Truth,
    k_on: usize,
) -> Result<ReferenceSchedule> {
    check_inputs(net, placement, profile)?;
    let k = k_on.min(profile.steps().saturating_sub(1));
    let model = TruthModel::new(net, truth);
    let sol = model.solve(net, &profile.p[k], &profile.q[k], k)?;
    let sensors = node_phase_indices(&placement.sensor_nodes(), net.phases());
    let delta = sensors.iter().map(|&i| sol.delta[i]).collect();
    Ok(ReferenceSchedule::constant(
        profile.steps(),
        vec![1.0; sensors.len()],
        delta,
    ))
}

pub fn simulate(
    net: &RadialNetwork,
    placement: &Placement,
    gains: &GainSchedule,
    profile: &Profile,
    refs: &ReferenceSchedule,
    opts: &SimOptions,
) -> Result<Trace> {
    check_inputs(net, placement, profile)?;
    let ph = net.phases();
    let der_index = node_phase_indices(&placement.der_nodes(), ph);
    let sensor_index = node_phase_indices(&placement.sensor_nodes(), ph);
    let (nd, ns) = (der_index.len(), sensor_index.len());
    let steps = profile.steps();
    for (_, g) in gains.segments() {
        if g.matrix().shape() != (2 * nd, 2 * ns) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, placement needs {}x{}",
                g.matrix().shape(),
                2 * nd,
                2 * ns
            )));
        }
    }
    if refs.v.len() < steps
        || refs.delta.len() < steps
        || refs
            .v
            .iter()
            .chain(&refs.delta)
            .take(2 * steps)
            .any(|r| r.len() != ns)
    {
        return Err(Error::Dimension(format!(
            "references must cover {steps} steps at {ns} sensor node-phases"
        )));
    }

    let model = TruthModel::new(net, opts.truth);
    let mut p_hat = vec![0.0; nd];
    let mut q_hat = vec![0.0; nd];
    let mut trace = Trace {
        truth: opts.truth,
        k_on: opts.k_on,
        dt: profile.dt,
        start: profile.start,
        base_kva: profile.base_kva,
        n: net.n(),
        phases: ph,
        der_index: der_index.clone(),
        sensor_index: sensor_index.clone(),
        v: Vec::with_capacity(steps),
        delta: Vec::with_capacity(steps),
        p_hat: Vec::with_capacity(steps),
        q_hat: Vec::with_capacity(steps),
        e: Vec::with_capacity(steps),
        saturated_steps: 0,
    };
    for k in 0..steps {
        let mut p = profile.p[k].clone();
        let mut q = profile.q[k].clone();
        for (j, &i) in der_index.iter().enumerate() {
            p[i] += p_hat[j];
            q[i] += q_hat[j];
        }
        let sol = model.solve(net, &p, &q, k)?;
        let mut e = Vec::with_capacity(2 * ns);
        e.extend(
            sensor_index
                .iter()
                .zip(&refs.v[k])
                .map(|(&i, r)| sol.v[i] - r),
        );
        e.extend(
            sensor_index
                .iter()
                .zip(&refs.delta[k])
                .map(|(&i, r)| sol.delta[i] - r),
        );
        trace.p_hat.push(p_hat.clone());
        trace.q_hat.push(q_hat.clone());
        if k >= opts.k_on {
            let u = -(gains.at(k).matrix() * DVector::from_column_slice(&e));
            let mut clipped = false;
            for j in 0..nd {
                q_hat[j] += u[j];
                p_hat[j] += u[nd + j];
                if let Some(cap) = opts.der_cap {
                    let s = p_hat[j].hypot(q_hat[j]);
                    if s > cap {
                        p_hat[j] *= cap / s;
                        q_hat[j] *= cap / s;
                        clipped = true;
                    }
                }
            }
            if clipped {
                trace.saturated_steps += 1;
            }
        }
        trace.v.push(sol.v);
        trace.delta.push(sol.delta);
        trace.e.push(e);
    }
    if trace.saturated_steps > 0 {
        debug!(
            "DER cap clipped set points on {} steps",
            trace.saturated_steps
        );
    }
    Ok(trace)
}

/// Benchmark policy: `(1.98 / y) * (2 / X)` on the reactive-power response to
/// magnitude errors, with `X` the reactance shared by the sensor and DER.
pub fn benchmark_gain(ss: &StateSpace, pattern: &SparsityPattern) -> Result<GainMatrix> {
    let half_d = ss.d() / 2;
    let half_s = ss.s() / 2;
    let y = pattern.y() as f64;
    let placement = &ss.placement;
    let sensors = node_phase_indices(&placement.sensor_nodes(), placement.phases());
    let mut f = nalgebra::DMatrix::zeros(ss.d(), ss.s());
    for &(r, c) in pattern.entries() {
        if r >= half_d || c >= half_s {
            continue;
        }
        let x = ss.x[(sensors[c], r)];
        if x == 0.0 {
            return Err(Error::DivideByZero { row: r, col: c });
        }
        f[(r, c)] = (1.98 / y) * (2.0 / x);
    }
    GainMatrix::new(f, pattern.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Violation band half-width as a fraction of nominal.
    pub band: f64,
    /// Settling band half-width.
    pub inner_band: f64,
    pub nominal: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            band: 0.05,
            inner_band: 0.015,
            nominal: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Share of steps from `k_on` on with any node-phase outside the band.
    pub violation_share: f64,
    pub violation_steps: usize,
    pub counted_steps: usize,
    /// Steps after `k_on` until every node-phase stays inside the inner band;
    /// `None` if the last step is still outside.
    pub settling_steps: Option<usize>,
    pub settling_time_s: Option<f64>,
    pub envelope_min: Vec<f64>,
    pub envelope_max: Vec<f64>,
}

pub fn metrics(trace: &Trace, opts: &MetricsOptions) -> MetricsReport {
    let steps = trace.steps();
    let mut envelope_min = Vec::with_capacity(steps);
    let mut envelope_max = Vec::with_capacity(steps);
    for k in 0..steps {
        let m = trace.magnitudes(k);
        envelope_min.push(m.iter().copied().fold(f64::INFINITY, f64::min));
        envelope_max.push(m.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let outside = |k: usize, band: f64| {
        envelope_min[k] < opts.nominal * (1.0 - band)
            || envelope_max[k] > opts.nominal * (1.0 + band)
    };
    let k_on = trace.k_on.min(steps);
    let counted_steps = steps - k_on;
    let violation_steps = (k_on..steps).filter(|&k| outside(k, opts.band)).count();
    let violation_share = if counted_steps == 0 {
        0.0
    } else {
        violation_steps as f64 / counted_steps as f64
    };
    let last_out = (k_on..steps).rev().find(|&k| outside(k, opts.inner_band));
    let settling_steps = match last_out {
        None => Some(0),
        Some(k) if k + 1 == steps => None,
        Some(k) => Some(k + 1 - k_on),
    };
    MetricsReport {
        violation_share,
        violation_steps,
        counted_steps,
        settling_steps,
        settling_time_s: settling_steps.map(|s| s as f64 * trace.dt),
        envelope_min,
        envelope_max,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Service {
    /// Voltage excursion mitigated, priced per pu-h.
    Regulation,
    /// Real power delivered, priced per kWh.
    Energy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffWindow {
    pub service: Service,
    /// Seconds since midnight, `start < end <= 86400`.
    pub start: f64,
    pub end: f64,
    pub price: f64,
}

impl TariffWindow {
    pub fn full_day(&self) -> bool {
        self.start <= 0.0 && self.end >= DAY
    }

    fn covers(&self, t: f64) -> bool {
        let t = t.rem_euclid(DAY);
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub windows: Vec<TariffWindow>,
}

impl Tariff {
    /// `(price, on_peak)` for a service at time `t`: a partial-day window is
    /// on-peak and takes precedence over a full-day (off-peak) window.
    pub fn price(&self, service: Service, t: f64) -> (f64, bool) {
        let mut off = 0.0;
        for w in self.windows.iter().filter(|w| w.service == service) {
            if w.full_day() {
                off = w.price;
            } else if w.covers(t) {
                return (w.price, true);
            }
        }
        (off, false)
    }
}

fn parse_hhmm(s: &str, line: usize) -> Result<f64> {
    if s.len() != 4 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::parse(line, format!("expected hhmm, got `{s}`")));
    }
    let h: u32 = s[..2].parse().expect("digits");
    let m: u32 = s[2..].parse().expect("digits");
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return Err(Error::parse(line, format!("invalid time `{s}`")));
    }
    Ok(f64::from(h * 3600 + m * 60))
}

/// Gain schedule that follows the tariff: while regulation is on-peak the
/// reactive-power response to magnitude errors sits at its upper bounds,
/// while energy is on-peak the real-power response to magnitude errors sits
/// at its lower bounds, and every other entry stays at the midpoint.
pub fn adjustment_schedule(
    ranges: &OperatingRanges,
    pattern: &SparsityPattern,
    tariff: &Tariff,
    start: f64,
    dt: f64,
    steps: usize,
) -> Result<GainSchedule> {
    if ranges.intervals.len() != pattern.y() {
        return Err(Error::Dimension(format!(
            "{} ranges for {} parameters",
            ranges.intervals.len(),
            pattern.y()
        )));
    }
    let (half_d, half_s) = (pattern.d() / 2, pattern.s() / 2);
    let gain_for = |reg_peak: bool, energy_peak: bool| {
        let values: Vec<f64> = pattern
            .entries()
            .iter()
            .zip(&ranges.intervals)
            .map(|(&(r, c), &(lo, hi))| {
                if c < half_s && r < half_d && reg_peak {
                    hi
                } else if c < half_s && r >= half_d && energy_peak {
                    lo
                } else {
                    0.5 * (lo + hi)
                }
            })
            .collect();
        GainMatrix::from_packed(pattern.clone(), &values)
    };
    let mut segments = Vec::new();
    let mut last = None;
    for k in 0..steps.max(1) {
        let t = start + k as f64 * dt;
        let flags = (
            tariff.price(Service::Regulation, t).1,
            tariff.price(Service::Energy, t).1,
        );
        if last != Some(flags) {
            segments.push((k, gain_for(flags.0, flags.1)?));
            last = Some(flags);
        }
    }
    GainSchedule::new(segments)
}

/// Parses `service,start_hhmm,end_hhmm,price` lines (`#` comments allowed).
pub fn parse_tariff(text: &str) -> Result<Tariff> {
    let mut windows = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with("service") {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(
                ln + 1,
                "expected service,start_hhmm,end_hhmm,price",
            ));
        }
        let service = match f[0] {
            "regulation" | "voltage" => Service::Regulation,
            "energy" | "real-power" => Service::Energy,
            other => return Err(Error::parse(ln + 1, format!("unknown service `{other}`"))),
        };
        let start = parse_hhmm(f[1], ln + 1)?;
        let end = parse_hhmm(f[2], ln + 1)?;
        if start >= end {
            return Err(Error::parse(ln + 1, "window must end after it starts"));
        }
        let price = f[3]
            .parse::<f64>()
            .map_err(|_| Error::parse(ln + 1, format!("bad price `{}`", f[3])))?;
        windows.push(TariffWindow {
            service,
            start,
            end,
            price,
        });
    }
    Ok(Tariff { windows })
}

/// Service quantities and revenue split by peak period.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceTotals {
    pub regulation_effort_off_peak: f64,
    pub regulation_revenue_off_peak: f64,
    pub regulation_effort_on_peak: f64,
    pub regulation_revenue_on_peak: f64,
    pub energy_off_peak_kwh: f64,
    pub energy_revenue_off_peak: f64,
    pub energy_on_peak_kwh: f64,
    pub energy_revenue_on_peak: f64,
    pub total: f64,
}

impl ServiceTotals {
    /// `(label, value)` rows in table order.
    pub fn rows(&self) -> [(&'static str, f64); 9] {
        [
            (
                "Voltage regulation effort off-peak (pu-h)",
                self.regulation_effort_off_peak,
            ),
            (
                "Voltage regulation revenue off-peak",
                self.regulation_revenue_off_peak,
            ),
            (
                "Voltage regulation effort on-peak (pu-h)",
                self.regulation_effort_on_peak,
            ),
            (
                "Voltage regulation revenue on-peak",
                self.regulation_revenue_on_peak,
            ),
            (
                "Real power actuation off-peak (kWh)",
                self.energy_off_peak_kwh,
            ),
            ("Real power revenue off-peak", self.energy_revenue_off_peak),
            (
                "Real power actuation on-peak (kWh)",
                self.energy_on_peak_kwh,
            ),
            ("Real power revenue on-peak", self.energy_revenue_on_peak),
            ("Total", self.total),
        ]
    }
}

/// Prices the regulation effort of `trace_on` relative to `trace_off` and the
/// real power its DERs delivered.
pub fn economics(trace_on: &Trace, trace_off: &Trace, tariff: &Tariff) -> Result<ServiceTotals> {
    if trace_on.steps() != trace_off.steps()
        || trace_on.dt != trace_off.dt
        || trace_on.start != trace_off.start
        || trace_on.n != trace_off.n
        || trace_on.phases != trace_off.phases
    {
        return Err(Error::MismatchedScenario(
            "controlled and uncontrolled traces differ in horizon or feeder".into(),
        ));
    }
    let hours = trace_on.dt / 3600.0;
    let mut t = ServiceTotals::default();
    for k in 0..trace_on.steps() {
        let time = trace_on.time(k);
        let on = trace_on.magnitudes(k);
        let off = trace_off.magnitudes(k);
        let effort: f64 = on
            .iter()
            .zip(&off)
            .map(|(a, b)| (b - 1.0).abs() - (a - 1.0).abs())
            .sum::<f64>()
            * hours;
        let (price, peak) = tariff.price(Service::Regulation, time);
        if peak {
            t.regulation_effort_on_peak += effort;
            t.regulation_revenue_on_peak += effort * price;
        } else {
            t.regulation_effort_off_peak += effort;
            t.regulation_revenue_off_peak += effort * price;
        }
        let kwh = trace_on.p_hat[k].iter().sum::<f64>() * trace_on.base_kva * hours;
        let (price, peak) = tariff.price(Service::Energy, time);
        if peak {
            t.energy_on_peak_kwh += kwh;
            t.energy_revenue_on_peak += kwh * price;
        } else {
            t.energy_off_peak_kwh += kwh;
            t.energy_revenue_off_peak += kwh * price;
        }
    }
    t.total = t.regulation_revenue_off_peak
        + t.regulation_revenue_on_peak
        + t.energy_revenue_off_peak
        + t.energy_revenue_on_peak;
    Ok(t)
}

/// Two-column revenue table (fixed vs adjusted parameters).
pub fn revenue_table(fixed: &ServiceTotals, adjusted: &ServiceTotals) -> String {
    let mut out = format!("{:<44}{:>16}{:>16}\n", "", "fixed", "adjusted");
    for ((label, a), (_, b)) in fixed.rows().iter().zip(adjusted.rows().iter()) {
        let _ = writeln!(out, "{label:<44}{a:>16.4}{b:>16.4}");
    }
    out
}

/// Shape of a synthetic day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSpec {
    /// Real load per loaded node-phase at the daily peak (p.u.).
    pub base_load: f64,
    pub power_factor: f64,
    pub load_shape: LoadShape,
    /// PV output per PV node-phase at 100% penetration and clear-sky noon (p.u.).
    pub solar_peak: f64,
    /// Multiplier on `solar_peak` (1.25 = 125% penetration).
    pub penetration: f64,
    /// Half-width of the uniform multiplicative noise.
    pub noise: f64,
    /// Nodes carrying load; empty means every node.
    pub load_nodes: Vec<usize>,
    /// Nodes carrying PV; empty means every node.
    pub pv_nodes: Vec<usize>,
    /// Cloud cover shading PV until `cloud_clear` (s since midnight), then
    /// ramping to clear sky over `cloud_ramp` seconds.
    pub cloud_start: f64,
    pub cloud_clear: f64,
    pub cloud_ramp: f64,
    /// Fraction of PV lost under cloud.
    pub cloud_depth: f64,
    pub start: f64,
    pub steps: usize,
    pub dt: f64,
    pub base_kva: f64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec {
            base_load: 0.01,
            power_factor: 0.95,
            load_shape: LoadShape::Residential,
            solar_peak: 0.02,
            penetration: 1.0,
            noise: 0.0,
            load_nodes: Vec::new(),
            pv_nodes: Vec::new(),
            cloud_start: 0.0,
            cloud_clear: 0.0,
            cloud_ramp: 60.0,
            cloud_depth: 0.0,
            start: 11.0 * 3600.0,
            steps: 96,
            dt: DEFAULT_DT,
            base_kva: 1000.0,
        }
    }
}

/// Daily load curve applied to `base_load`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadShape {
    /// Constant at `base_load`.
    Flat,
    /// Morning shoulder and an evening peak.
    #[default]
    Residential,
    /// Business-hours plateau that falls off through the evening.
    Commercial,
}

impl LoadShape {
    /// Load multiplier at time of day `t` (seconds).
    pub fn at(self, t: f64) -> f64 {
        let h = t.rem_euclid(DAY) / 3600.0;
        let bump = |c: f64, w: f64| (-((h - c) / w).powi(2)).exp();
        match self {
            LoadShape::Flat => 1.0,
            LoadShape::Residential => 0.55 + 0.2 * bump(8.0, 2.0) + 0.45 * bump(19.0, 2.5),
            LoadShape::Commercial => 0.35 + 0.65 * bump(13.0, 4.5),
        }
    }
}

/// Clear-sky PV fraction at time of day `t`: zero outside 06:00-18:00.
pub fn solar_shape(t: f64) -> f64 {
    let h = t.rem_euclid(DAY) / 3600.0;
    if !(6.0..18.0).contains(&h) {
        return 0.0;
    }
    (std::f64::consts::PI * (h - 6.0) / 12.0).sin().powf(1.5)
}

pub fn synth_profiles(net: &RadialNetwork, spec: &ProfileSpec, seed: u64) -> Profile {
    let n = net.n();
    let ph = net.phases();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |list: &[usize]| -> Vec<bool> {
        let mut mask = vec![list.is_empty(); n + 1];
        for &i in list {
            if i >= 1 && i <= n {
                mask[i] = true;
            }
        }
        mask
    };
    let loads = pick(&spec.load_nodes);
    let pvs = pick(&spec.pv_nodes);
    let q_ratio = (1.0 / (spec.power_factor * spec.power_factor) - 1.0)
        .max(0.0)
        .sqrt();
    let mut prof = Profile {
        n,
        phases: ph,
        dt: spec.dt,
        start: spec.start,
        base_kva: spec.base_kva,
        p: Vec::with_capacity(spec.steps),
        q: Vec::with_capacity(spec.steps),
    };
    for k in 0..spec.steps {
        let t = spec.start + k as f64 * spec.dt;
        let cloud = if spec.cloud_depth > 0.0
            && t >= spec.cloud_start
            && t < spec.cloud_clear + spec.cloud_ramp
        {
            let shade = if t < spec.cloud_clear {
                1.0
            } else {
                1.0 - (t - spec.cloud_clear) / spec.cloud_ramp.max(f64::MIN_POSITIVE)
            };
            1.0 - spec.cloud_depth * shade
        } else {
            1.0
        };
        let load = spec.base_load * spec.load_shape.at(t);
        let pv = spec.solar_peak * spec.penetration * solar_shape(t) * cloud;
        let mut p = vec![0.0; n * ph];
        let mut q = vec![0.0; n * ph];
        for node in 1..=n {
            for a in 0..ph {
                let i = (node - 1) * ph + a;
                let mut jitter = || {
                    if spec.noise > 0.0 {
                        1.0 + rng.gen_range(-spec.noise..=spec.noise)
                    } else {
                        1.0
                    }
                };
                let l = if loads[node] { load * jitter() } else { 0.0 };
                let g = if pvs[node] { pv * jitter() } else { 0.0 };
                p[i] = g - l;
                q[i] = -l * q_ratio;
            }
        }
        prof.p.push(p);
        prof.q.push(q);
    }
    prof
}
