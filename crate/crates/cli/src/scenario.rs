//! Flat TOML scenario files. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use gridstab::netmodel::{
    build_impedance_matrices, parse_feeder, ImpedanceMatrices, RadialNetwork,
};
use gridstab::placement::{parse_placement, Placement};
use gridstab::region::{RangeMode, SamplePolicy};
use gridstab::sim::{
    parse_tariff, synth_profiles, LoadShape, MetricsOptions, Profile, ProfileSpec, Tariff, Truth,
    DEFAULT_DT,
};
use gridstab::sysbuild::{build_open_loop, reduce, PatternKind, SparsityPattern, StateSpace};
use serde::Deserialize;

use crate::CliError;

/// Which gain the analysis and simulation commands use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainPolicy {
    Midpoint,
    Upper,
    Lower,
    QuadrantUpper,
    QuadrantLower,
    /// Fixed volt-var gain on a dense reactive-power-to-magnitude pattern.
    Benchmark,
    /// Controller off.
    Zero,
}

impl GainPolicy {
    pub fn sample_policy(self) -> Option<SamplePolicy> {
        match self {
            GainPolicy::Midpoint => Some(SamplePolicy::Midpoint),
            GainPolicy::Upper => Some(SamplePolicy::Upper),
            GainPolicy::Lower => Some(SamplePolicy::Lower),
            GainPolicy::QuadrantUpper => Some(SamplePolicy::QuadrantUpper),
            GainPolicy::QuadrantLower => Some(SamplePolicy::QuadrantLower),
            GainPolicy::Benchmark | GainPolicy::Zero => None,
        }
    }
}

impl std::str::FromStr for GainPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        GainPolicy::deserialize(
            serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s),
        )
        .map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: Option<String>,
    pub feeder: PathBuf,
    pub placement: PathBuf,
    /// Uncontrolled injections as CSV; synthesized from the profile keys when absent.
    pub profiles: Option<PathBuf>,
    pub tariff: Option<PathBuf>,
    /// Alternative sitings for `site-scan`.
    #[serde(default)]
    pub candidates: Vec<PathBuf>,

    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_range_mode")]
    pub range_mode: RangeMode,
    #[serde(default = "default_gain_policy")]
    pub gain_policy: GainPolicy,
    #[serde(default = "default_pattern")]
    pub pattern: PatternKind,
    #[serde(default = "default_truth")]
    pub truth: Truth,
    #[serde(default)]
    pub seed: u64,

    /// Number of control steps.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Clock time of step 0, `HH:MM`.
    #[serde(default = "default_start")]
    pub start: String,
    /// Controller-on step; defaults to the step nearest 60 s.
    pub k_on: Option<usize>,
    /// Apparent-power limit per DER node-phase (p.u.).
    pub der_cap: Option<f64>,
    /// Substation voltage magnitude (p.u.), overriding the feeder file.
    pub source_voltage: Option<f64>,
    /// Angle reference (rad) for every sensor; default is the controller-off angle at `k_on`.
    pub angle_reference: Option<f64>,

    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_inner_band")]
    pub inner_band: f64,

    #[serde(default = "default_base_load")]
    pub base_load: f64,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    #[serde(default)]
    pub load_shape: LoadShape,
    #[serde(default = "default_solar_peak")]
    pub solar_peak: f64,
    #[serde(default = "default_penetration")]
    pub penetration: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub load_nodes: Vec<usize>,
    #[serde(default)]
    pub pv_nodes: Vec<usize>,
    #[serde(default)]
    pub cloud_depth: f64,
    /// `HH:MM` at which the cloud starts to clear.
    pub cloud_clear: Option<String>,
    #[serde(default = "default_cloud_ramp")]
    pub cloud_ramp: f64,
    #[serde(default = "default_base_kva")]
    pub base_kva: f64,

    /// Two packed-parameter indices for the region slice plot.
    #[serde(default = "default_slice_dims")]
    pub slice_dims: (usize, usize),

    #[serde(skip)]
    pub dir: PathBuf,
}

fn default_eps() -> f64 {
    gridstab::stability::DEFAULT_EPS
}
fn default_range_mode() -> RangeMode {
    RangeMode::SafeHypercube
}
fn default_gain_policy() -> GainPolicy {
    GainPolicy::Midpoint
}
fn default_pattern() -> PatternKind {
    PatternKind::Full
}
fn default_truth() -> Truth {
    Truth::Sweep
}
fn default_horizon() -> usize {
    96
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_start() -> String {
    "11:00".into()
}
fn default_band() -> f64 {
    0.05
}
fn default_inner_band() -> f64 {
    0.015
}
fn default_base_load() -> f64 {
    ProfileSpec::default().base_load
}
fn default_power_factor() -> f64 {
    ProfileSpec::default().power_factor
}
fn default_solar_peak() -> f64 {
    ProfileSpec::default().solar_peak
}
fn default_penetration() -> f64 {
    1.0
}
fn default_cloud_ramp() -> f64 {
    ProfileSpec::default().cloud_ramp
}
fn default_base_kva() -> f64 {
    ProfileSpec::default().base_kva
}
fn default_slice_dims() -> (usize, usize) {
    (0, 1)
}

/// `HH:MM` to seconds since midnight.
pub fn parse_clock(text: &str) -> Result<f64, CliError> {
    let bad = || CliError::Input(format!("expected HH:MM, got `{text}`"));
    let (h, m) = text.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    let m: u32 = m.trim().parse().map_err(|_| bad())?;
    if h > 24 || m > 59 || (h == 24 && m > 0) {
        return Err(bad());
    }
    Ok(f64::from(h * 3600 + m * 60))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::File(format!("{}: {e}", path.display())))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let mut scn: Scenario = toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        scn.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        scn.validate()?;
        Ok(scn)
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = [("dt", self.dt), ("base_kva", self.base_kva)];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(CliError::Input(format!("`{k}` must be positive")));
        }
        if !(self.eps >= 0.0) || !(self.band > 0.0) || !(self.inner_band > 0.0) {
            return Err(CliError::Input("eps must be >= 0 and bands > 0".into()));
        }
        if self.horizon == 0 {
            return Err(CliError::Input("horizon must be at least one step".into()));
        }
        parse_clock(&self.start)?;
        if let Some(c) = &self.cloud_clear {
            parse_clock(c)?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.placement
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    pub fn network(&self) -> Result<RadialNetwork, CliError> {
        let mut net = parse_feeder(&read(&self.resolve(&self.feeder))?)?;
        if let Some(v) = self.source_voltage {
            net.v0 = v * v;
        }
        Ok(net)
    }

    pub fn placement_at(&self, path: &Path, net: &RadialNetwork) -> Result<Placement, CliError> {
        Ok(parse_placement(&read(&self.resolve(path))?, net)?)
    }

    pub fn placement(&self, net: &RadialNetwork) -> Result<Placement, CliError> {
        self.placement_at(&self.placement, net)
    }

    pub fn tariff(&self) -> Result<Tariff, CliError> {
        let path = self
            .tariff
            .as_ref()
            .ok_or_else(|| CliError::Input("scenario names no tariff".into()))?;
        Ok(parse_tariff(&read(&self.resolve(path))?)?)
    }

    pub fn k_on(&self) -> usize {
        self.k_on
            .unwrap_or_else(|| (60.0 / self.dt).round() as usize)
    }

    pub fn metrics_options(&self) -> MetricsOptions {
        MetricsOptions {
            band: self.band,
            inner_band: self.inner_band,
            nominal: 1.0,
        }
    }

    pub fn profile_spec(&self) -> Result<ProfileSpec, CliError> {
        Ok(ProfileSpec {
            base_load: self.base_load,
            power_factor: self.power_factor,
            load_shape: self.load_shape,
            solar_peak: self.solar_peak,
            penetration: self.penetration,
            noise: self.noise,
            load_nodes: self.load_nodes.clone(),
            pv_nodes: self.pv_nodes.clone(),
            cloud_start: 0.0,
            cloud_clear: match &self.cloud_clear {
                Some(c) => parse_clock(c)?,
                None => 0.0,
            },
            cloud_ramp: self.cloud_ramp,
            cloud_depth: self.cloud_depth,
            start: parse_clock(&self.start)?,
            steps: self.horizon,
            dt: self.dt,
            base_kva: self.base_kva,
        })
    }

    pub fn profile(&self, net: &RadialNetwork) -> Result<Profile, CliError> {
        match &self.profiles {
            Some(path) => {
                let prof = Profile::from_csv(
                    &read(&self.resolve(path))?,
                    net.n(),
                    net.phases(),
                    self.base_kva,
                )?;
                if prof.steps() < self.horizon {
                    return Err(CliError::Input(format!(
                        "profile has {} steps, horizon needs {}",
                        prof.steps(),
                        self.horizon
                    )));
                }
                Ok(prof)
            }
            None => Ok(synth_profiles(net, &self.profile_spec()?, self.seed)),
        }
    }
}

/// Everything the analysis commands derive from one siting.
pub struct Model {
    pub net: RadialNetwork,
    pub mats: ImpedanceMatrices,
    pub placement: Placement,
    pub ss: StateSpace,
    pub pattern: SparsityPattern,
}

impl Model {
    pub fn build(scn: &Scenario) -> Result<Self, CliError> {
        let net = scn.network()?;
        let placement = scn.placement(&net)?;
        Self::with_placement(scn, net, placement)
    }

    pub fn with_placement(
        scn: &Scenario,
        net: RadialNetwork,
        placement: Placement,
    ) -> Result<Self, CliError> {
        let mats = build_impedance_matrices(&net);
        let ss = reduce(&build_open_loop(&mats, &placement)?)?;
        let pattern = SparsityPattern::from_links(&placement, scn.pattern);
        Ok(Model {
            net,
            mats,
            placement,
            ss,
            pattern,
        })
    }
}
