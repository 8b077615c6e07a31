//! DER and sensor siting, index sets, and selector matrices.
//!
//! Index sets use 1-based positions in the `2N`-long state (`N = n * phases`):
//! `1..=N` are squared-magnitude coordinates, `N+1..=2N` are angle
//! coordinates. A DER or sensor at a feeder node covers all of its phases.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::netmodel::RadialNetwork;

/// The `(node, has_der, has_sensor)` triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Site {
    pub node: usize,
    pub der: bool,
    pub sensor: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    n: usize,
    phases: usize,
    sites: Vec<Site>,
    /// Explicit `(der_node, sensor_node)` communication links. `None` means
    /// every DER hears every sensor.
    links: Option<Vec<(usize, usize)>>,
}

impl Placement {
    /// Builds a placement from the nodes that carry something; all other
    /// nodes default to `(0, 0)`.
    pub fn new(n: usize, phases: usize, sited: &[Site]) -> Result<Self> {
        let mut sites: Vec<Site> = (1..=n)
            .map(|node| Site {
                node,
                der: false,
                sensor: false,
            })
            .collect();
        let mut seen = BTreeSet::new();
        for s in sited {
            if s.node == 0 || s.node > n {
                return Err(Error::Index {
                    index: s.node,
                    max: n,
                });
            }
            if !seen.insert(s.node) {
                return Err(Error::Dimension(format!("node {} sited twice", s.node)));
            }
            sites[s.node - 1] = *s;
        }
        Ok(Placement {
            n,
            phases,
            sites,
            links: None,
        })
    }

    /// Every DER colocated with a sensor, at the given nodes.
    pub fn colocated(n: usize, phases: usize, nodes: &[usize]) -> Result<Self> {
        let sited: Vec<Site> = nodes
            .iter()
            .map(|&node| Site {
                node,
                der: true,
                sensor: true,
            })
            .collect();
        Placement::new(n, phases, &sited)
    }

    pub fn with_links(mut self, links: Vec<(usize, usize)>) -> Result<Self> {
        for &(der, sensor) in &links {
            let ok = der >= 1
                && der <= self.n
                && sensor >= 1
                && sensor <= self.n
                && self.sites[der - 1].der
                && self.sites[sensor - 1].sensor;
            if !ok {
                return Err(Error::Dimension(format!(
                    "link ({der}, {sensor}) must join a DER node to a sensor node"
                )));
            }
        }
        let mut links = links;
        links.sort_unstable();
        links.dedup();
        self.links = Some(links);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// `N = n * phases`, the length of each half of the state.
    pub fn width(&self) -> usize {
        self.n * self.phases
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn der_nodes(&self) -> Vec<usize> {
        self.sites
            .iter()
            .filter(|s| s.der)
            .map(|s| s.node)
            .collect()
    }

    pub fn sensor_nodes(&self) -> Vec<usize> {
        self.sites
            .iter()
            .filter(|s| s.sensor)
            .map(|s| s.node)
            .collect()
    }

    /// Effective communication links, sorted.
    pub fn links(&self) -> Vec<(usize, usize)> {
        match &self.links {
            Some(l) => l.clone(),
            None => {
                let sensors = self.sensor_nodes();
                self.der_nodes()
                    .into_iter()
                    .flat_map(|d| sensors.iter().map(move |&s| (d, s)))
                    .collect()
            }
        }
    }

    pub fn has_explicit_links(&self) -> bool {
        self.links.is_some()
    }

    fn expand(&self, nodes: &[usize], offset: usize) -> Vec<usize> {
        nodes
            .iter()
            .flat_map(|&node| (0..self.phases).map(move |p| (node - 1) * self.phases + p + 1))
            .map(|i| i + offset)
            .collect()
    }

    /// DER positions in the magnitude block.
    pub fn d1(&self) -> Vec<usize> {
        self.expand(&self.der_nodes(), 0)
    }

    pub fn d2(&self) -> Vec<usize> {
        self.expand(&self.der_nodes(), self.width())
    }

    pub fn s1(&self) -> Vec<usize> {
        self.expand(&self.sensor_nodes(), 0)
    }

    pub fn s2(&self) -> Vec<usize> {
        self.expand(&self.sensor_nodes(), self.width())
    }

    /// `D = {D1, D2}`.
    pub fn der_set(&self) -> Vec<usize> {
        let mut v = self.d1();
        v.extend(self.d2());
        v
    }

    /// `S = {S1, S2}`.
    pub fn sensor_set(&self) -> Vec<usize> {
        let mut v = self.s1();
        v.extend(self.s2());
        v
    }

    pub fn d(&self) -> usize {
        2 * self.der_nodes().len() * self.phases
    }

    pub fn s(&self) -> usize {
        2 * self.sensor_nodes().len() * self.phases
    }

    /// Every sensor node also hosts a DER.
    pub fn sensors_have_ders(&self) -> bool {
        self.sites.iter().all(|s| !s.sensor || s.der)
    }

    pub fn require_sensors_have_ders(&self) -> Result<()> {
        match self.sites.iter().find(|s| s.sensor && !s.der) {
            Some(s) => Err(Error::Assumption(format!(
                "sensor at node {} has no DER",
                s.node
            ))),
            None => Ok(()),
        }
    }

    /// Copy without the sensor and DER at `node`. Links touching `node` are dropped.
    pub fn without_pair(&self, node: usize) -> Result<Self> {
        let site = self.sites.get(node.wrapping_sub(1)).ok_or(Error::Index {
            index: node,
            max: self.n,
        })?;
        if !(site.der && site.sensor) {
            return Err(Error::Dimension(format!(
                "node {node} does not host a DER-sensor pair"
            )));
        }
        let mut next = self.clone();
        next.sites[node - 1].der = false;
        next.sites[node - 1].sensor = false;
        if let Some(links) = next.links.as_mut() {
            links.retain(|&(d, s)| d != node && s != node);
        }
        Ok(next)
    }

    /// Copy with a colocated pair at `node`; with explicit links the new DER
    /// is linked to its own sensor only.
    pub fn with_pair(&self, node: usize) -> Result<Self> {
        if node == 0 || node > self.n {
            return Err(Error::Index {
                index: node,
                max: self.n,
            });
        }
        let mut next = self.clone();
        next.sites[node - 1].der = true;
        next.sites[node - 1].sensor = true;
        if let Some(links) = next.links.as_mut() {
            links.push((node, node));
            links.sort_unstable();
            links.dedup();
        }
        Ok(next)
    }

    pub fn to_placement_text(&self) -> String {
        let mut out = String::new();
        for s in self.sites.iter().filter(|s| s.der || s.sensor) {
            out.push_str(&format!(
                "site {} der={} sensor={}\n",
                s.node, s.der as u8, s.sensor as u8
            ));
        }
        if let Some(links) = &self.links {
            for (d, s) in links {
                out.push_str(&format!("link {d} {s}\n"));
            }
        }
        out
    }
}

/// Parses `site <node> der=<0|1> sensor=<0|1>` lines, plus optional
/// `link <der_node> <sensor_node>` lines restricting which sensors each DER hears.
pub fn parse_placement(text: &str, net: &RadialNetwork) -> Result<Placement> {
    let mut sited = Vec::new();
    let mut links = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["site", node, rest @ ..] => {
                let node: usize = node
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad node `{node}`")))?;
                let mut site = Site {
                    node,
                    der: false,
                    sensor: false,
                };
                for kv in rest {
                    let (key, value) = kv.split_once('=').ok_or_else(|| {
                        Error::parse(line_no, format!("expected key=value, got `{kv}`"))
                    })?;
                    let flag = match value {
                        "0" => false,
                        "1" => true,
                        _ => return Err(Error::parse(line_no, format!("`{key}` must be 0 or 1"))),
                    };
                    match key {
                        "der" => site.der = flag,
                        "sensor" => site.sensor = flag,
                        _ => return Err(Error::parse(line_no, format!("unknown key `{key}`"))),
                    }
                }
                sited.push((line_no, site));
            }
            ["link", der, sensor] => {
                let parse = |t: &str| {
                    t.parse::<usize>()
                        .map_err(|_| Error::parse(line_no, format!("bad node `{t}`")))
                };
                links.push((parse(der)?, parse(sensor)?));
            }
            _ => return Err(Error::parse(line_no, format!("cannot parse `{line}`"))),
        }
    }
    let mut seen = BTreeSet::new();
    for (line_no, s) in &sited {
        if s.node == 0 || s.node > net.n() {
            return Err(Error::parse(
                *line_no,
                format!("node {} not in feeder", s.node),
            ));
        }
        if !seen.insert(s.node) {
            return Err(Error::parse(
                *line_no,
                format!("node {} sited twice", s.node),
            ));
        }
    }
    let sites: Vec<Site> = sited.into_iter().map(|(_, s)| s).collect();
    let placement = Placement::new(net.n(), net.phases(), &sites)?;
    if links.is_empty() {
        Ok(placement)
    } else {
        placement.with_links(links)
    }
}

/// `Gamma_c(Omega)`: column `k` is the standard basis vector `e_{omega_k}` of length `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectorMatrix {
    rows: usize,
    cols: Vec<usize>,
}

impl SelectorMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// 1-based basis indices, one per column.
    pub fn columns(&self) -> &[usize] {
        &self.cols
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols.len());
        for (k, &row) in self.cols.iter().enumerate() {
            m[(row - 1, k)] = 1.0;
        }
        m
    }

    /// Moore-Penrose inverse; the columns are orthonormal so this is the transpose.
    pub fn pinv(&self) -> DMatrix<f64> {
        self.to_matrix().transpose()
    }
}

pub fn selector(omega: &[usize], c: usize) -> Result<SelectorMatrix> {
    if let Some(&bad) = omega.iter().find(|&&w| w == 0 || w > c) {
        return Err(Error::Dimension(format!("index {bad} outside 1..={c}")));
    }
    if omega.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Dimension(
            "selector indices must be strictly increasing".into(),
        ));
    }
    Ok(SelectorMatrix {
        rows: c,
        cols: omega.to_vec(),
    })
}

/// Selector and permutation matrices derived from a placement.
#[derive(Clone, Debug)]
pub struct Selectors {
    /// `T^d = Gamma_N(D1)`, `N x d/2`.
    pub td: DMatrix<f64>,
    /// `T^s = Gamma_2N(S)^T`, `s x 2N`.
    pub ts: DMatrix<f64>,
    /// `T = [Gamma(S∩D), Gamma(S∩D̄), Gamma(S̄∩D), Gamma(S̄∩D̄)]`, `2N x 2N`.
    pub t: DMatrix<f64>,
    /// `G = Gamma_2N({1..s})`, `2N x s`.
    pub g: DMatrix<f64>,
    /// Column order of `T` as 1-based state indices.
    pub t_columns: Vec<usize>,
}

pub fn build_selectors(p: &Placement, require_sensor_der: bool) -> Result<Selectors> {
    if require_sensor_der {
        p.require_sensors_have_ders()?;
    }
    let width = p.width();
    let two_n = 2 * width;
    let der: BTreeSet<usize> = p.der_set().into_iter().collect();
    let sen: BTreeSet<usize> = p.sensor_set().into_iter().collect();
    let all: BTreeSet<usize> = (1..=two_n).collect();
    let der_c: BTreeSet<usize> = all.difference(&der).copied().collect();
    let sen_c: BTreeSet<usize> = all.difference(&sen).copied().collect();

    let blocks: [Vec<usize>; 4] = [
        sen.intersection(&der).copied().collect(),
        sen.intersection(&der_c).copied().collect(),
        sen_c.intersection(&der).copied().collect(),
        sen_c.intersection(&der_c).copied().collect(),
    ];
    let mut t = DMatrix::zeros(two_n, two_n);
    let mut t_columns = Vec::with_capacity(two_n);
    for block in &blocks {
        let gamma = selector(block, two_n)?.to_matrix();
        for k in 0..block.len() {
            t.set_column(t_columns.len(), &gamma.column(k));
            t_columns.push(block[k]);
        }
    }
    let s = sen.len();
    let g = selector(&(1..=s).collect::<Vec<_>>(), two_n)?.to_matrix();
    Ok(Selectors {
        td: selector(&p.d1(), width)?.to_matrix(),
        ts: selector(&p.sensor_set(), two_n)?.pinv(),
        t,
        g,
        t_columns,
    })
}
