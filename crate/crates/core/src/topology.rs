//! Network geometry and link rates.
//!
//! Nodes live in the plane with the access point at the origin. Generated
//! topologies are drawn uniformly over the unit disk and rescaled so the
//! farthest node sits at distance exactly one. Link rates follow the
//! Shannon capacity of a pathloss channel with unit noise power.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances are clamped below at this value before computing SNR.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Parameters a topology was generated from, kept for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub n: usize,
    pub seed: u64,
}

/// Node positions around an access point at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    positions: Vec<Point>,
    generation: Option<Generation>,
}

impl Topology {
    /// Builds a topology from explicit positions. No normalization is applied.
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("topology needs at least one node".into()));
        }
        for (k, p) in positions.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Geometry(format!("node {k} has a non-finite coordinate")));
            }
            if p.norm() <= 0.0 {
                return Err(Error::Geometry(format!("node {k} coincides with the access point")));
            }
        }
        Ok(Topology { positions, generation: None })
    }

    /// Draws `n` nodes uniformly over the unit disk, then rescales so the
    /// farthest node is at distance one from the access point.
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("node count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = Vec::with_capacity(n);
        while positions.len() < n {
            let r = rng.random::<f64>().sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            if r > 0.0 {
                positions.push(Point::new(r * theta.cos(), r * theta.sin()));
            }
        }
        let mut topo = Topology::new(positions)?.normalized();
        topo.generation = Some(Generation { n, seed });
        Ok(topo)
    }

    /// Rescales every coordinate so that the farthest node lies at distance one.
    pub fn normalized(mut self) -> Self {
        let max = self.max_distance();
        for p in &mut self.positions {
            p.x /= max;
            p.y /= max;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn position(&self, k: NodeId) -> Point {
        self.positions[k.0]
    }

    pub fn generation(&self) -> Option<Generation> {
        self.generation
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.positions.len()).map(NodeId)
    }

    pub fn distance_to_ap(&self, k: NodeId) -> f64 {
        self.positions[k.0].norm()
    }

    pub fn distance(&self, k: NodeId, l: NodeId) -> f64 {
        self.positions[k.0].distance(self.positions[l.0])
    }

    pub fn max_distance(&self) -> f64 {
        self.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Plain-text record format: comment lines start with `#`, one node per
    /// line as `id x y`. Coordinates are written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# fairmac topology v1\n");
        if let Some(g) = self.generation {
            let _ = writeln!(out, "# generator n={} seed={}", g.n, g.seed);
        }
        out.push_str("# id x y\n");
        for (k, p) in self.positions.iter().enumerate() {
            let _ = writeln!(out, "{k} {:?} {:?}", p.x, p.y);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut generation = None;
        let mut positions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(rest) = comment.trim().strip_prefix("generator") {
                    generation = Some(parse_generation(rest, line_no)?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `id x y`, found {} fields", fields.len()),
                });
            }
            let id: usize = parse_field(fields[0], line_no)?;
            if id != positions.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("node ids must be consecutive from 0, expected {}", positions.len()),
                });
            }
            let x = parse_field(fields[1], line_no)?;
            let y = parse_field(fields[2], line_no)?;
            positions.push(Point::new(x, y));
        }
        let mut topo = Topology::new(positions)?;
        topo.generation = generation;
        Ok(topo)
    }
}

fn parse_field<T: FromStr>(s: &str, line: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::Parse { line, msg: format!("`{s}`: {e}") })
}

fn parse_generation(rest: &str, line: usize) -> Result<Generation> {
    let mut n = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("n", v)) => n = Some(parse_field(v, line)?),
            Some(("seed", v)) => seed = Some(parse_field(v, line)?),
            _ => {}
        }
    }
    match (n, seed) {
        (Some(n), Some(seed)) => Ok(Generation { n, seed }),
        _ => Err(Error::Parse { line, msg: "generator header needs n= and seed=".into() }),
    }
}

/// Transmit SNR at unit distance (noise normalized to one) and pathloss
/// exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub tx_snr: f64,
    pub gamma: f64,
}

impl ChannelParams {
    pub fn new(tx_snr: f64, gamma: f64) -> Result<Self> {
        let params = ChannelParams { tx_snr, gamma };
        params.validate()?;
        Ok(params)
    }

    pub fn from_db(tx_snr_db: f64, gamma: f64) -> Result<Self> {
        Self::new(10f64.powf(tx_snr_db / 10.0), gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tx_snr > 0.0 && self.tx_snr.is_finite()) {
            return Err(Error::Config(format!("tx_snr must be positive, got {}", self.tx_snr)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Received SNR at `distance` under the pathloss model.
pub fn snr_at(distance: f64, params: &ChannelParams) -> Result<f64> {
    if distance.is_nan() || distance <= 0.0 {
        return Err(Error::Geometry(format!("distance must be positive, got {distance}")));
    }
    Ok(params.tx_snr / distance.powf(params.gamma))
}

/// Achievable rate in bits per channel use.
pub fn link_rate(snr: f64) -> Result<f64> {
    if snr.is_nan() || snr < 0.0 {
        return Err(Error::Domain(format!("snr must be non-negative, got {snr}")));
    }
    Ok((1.0 + snr).log2())
}

fn clamped_rate(distance: f64, params: &ChannelParams) -> f64 {
    let snr = params.tx_snr / distance.max(MIN_DISTANCE).powf(params.gamma);
    (1.0 + snr).log2()
}

/// Direct rates to the access point and symmetric node-to-node rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    direct: Vec<f64>,
    /// Row-major `n x n`, diagonal unused (zero).
    pair: Vec<f64>,
}

impl RateTable {
    pub fn build(topology: &Topology, params: &ChannelParams) -> Result<Self> {
        params.validate()?;
        let n = topology.len();
        let direct = topology.nodes().map(|k| clamped_rate(topology.distance_to_ap(k), params)).collect();
        let mut pair = vec![0.0; n * n];
        for k in 0..n {
            for l in (k + 1)..n {
                let r = clamped_rate(topology.distance(NodeId(k), NodeId(l)), params);
                pair[k * n + l] = r;
                pair[l * n + k] = r;
            }
        }
        Ok(RateTable { direct, pair })
    }

    /// Builds a table from explicit rates. `pair` is row-major `n x n` and
    /// must be symmetric; the diagonal is ignored.
    pub fn from_rates(direct: Vec<f64>, pair: Vec<f64>) -> Result<Self> {
        let n = direct.len();
        if n == 0 {
            return Err(Error::Config("rate table needs at least one node".into()));
        }
        if pair.len() != n * n {
            return Err(Error::Config(format!("pair table must have {} entries", n * n)));
        }
        if direct.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Domain("direct rates must be finite and non-negative".into()));
        }
        let mut pair = pair;
        for k in 0..n {
            pair[k * n + k] = 0.0;
            for l in 0..n {
                let r = pair[k * n + l];
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::Domain(format!("pair rate ({k},{l}) = {r}")));
                }
                if r != pair[l * n + k] {
                    return Err(Error::Domain(format!("pair rates ({k},{l}) not symmetric")));
                }
            }
        }
        Ok(RateTable { direct, pair })
    }

    pub fn len(&self) -> usize {
        self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.direct.len()).map(NodeId)
    }

    #[inline]
    pub fn direct(&self, k: NodeId) -> f64 {
        self.direct[k.0]
    }

    pub fn direct_rates(&self) -> &[f64] {
        &self.direct
    }

    #[inline]
    pub fn pair(&self, k: NodeId, l: NodeId) -> f64 {
        debug_assert_ne!(k, l, "pair rate of a node with itself");
        self.pair[k.0 * self.direct.len() + l.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(tx_snr: f64, gamma: f64) -> ChannelParams {
        ChannelParams::new(tx_snr, gamma).unwrap()
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr_at(1.0, &params(10.0, 2.0)).unwrap(), 10.0);
        assert_eq!(snr_at(0.5, &params(10.0, 2.0)).unwrap(), 40.0);
        assert_eq!(snr_at(1.0, &params(10.0, 0.0)).unwrap(), 10.0);
        assert!(matches!(snr_at(0.0, &params(10.0, 2.0)), Err(Error::Geometry(_))));
        assert!(matches!(snr_at(-1.0, &params(10.0, 2.0)), Err(Error::Geometry(_))));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(link_rate(0.0).unwrap(), 0.0);
        assert_eq!(link_rate(1.0).unwrap(), 1.0);
        assert_eq!(link_rate(3.0).unwrap(), 2.0);
        assert!(matches!(link_rate(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn channel_params_validation() {
        assert!(ChannelParams::new(0.0, 2.0).is_err());
        assert!(ChannelParams::new(1.0, -1.0).is_err());
        let p = ChannelParams::from_db(10.0, 2.0).unwrap();
        assert!((p.tx_snr - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_lands_on_unit_circle() {
        for seed in 0..10 {
            let t = Topology::generate(1, seed).unwrap();
            assert!((t.distance_to_ap(NodeId(0)) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(matches!(Topology::generate(0, 1), Err(Error::Config(_))));
        assert!(Topology::new(vec![]).is_err());
        assert!(Topology::new(vec![Point::ORIGIN]).is_err());
    }

    #[test]
    fn forty_nodes_satisfy_normalization() {
        let t = Topology::generate(40, 2024).unwrap();
        assert_eq!(t.len(), 40);
        assert!((t.max_distance() - 1.0).abs() <= 1e-12);
        for k in t.nodes() {
            let d = t.distance_to_ap(k);
            assert!(d > 0.0 && d <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(Topology::generate(5, 9).unwrap(), Topology::generate(5, 9).unwrap());
        assert_ne!(Topology::generate(5, 9).unwrap(), Topology::generate(5, 10).unwrap());
    }

    #[test]
    fn two_node_rate_table() {
        let t = Topology::new(vec![Point::new(1.0, 0.0), Point::new(0.0, 0.5)]).unwrap();
        let rates = RateTable::build(&t, &params(10.0, 2.0)).unwrap();
        assert!((rates.direct(NodeId(0)) - 11f64.log2()).abs() < 1e-12);
        assert!((rates.direct(NodeId(1)) - 41f64.log2()).abs() < 1e-12);
        assert!((rates.direct(NodeId(0)) - 3.459).abs() < 1e-3);
        assert!((rates.direct(NodeId(1)) - 5.358).abs() < 1e-3);
        let d01 = 1.25f64.sqrt();
        let expected = (1.0 + 10.0 / (d01 * d01)).log2();
        assert!((rates.pair(NodeId(0), NodeId(1)) - expected).abs() < 1e-12);
    }

    #[test]
    fn vanishing_power_gives_vanishing_rate() {
        let t = Topology::new(vec![Point::new(1.0, 0.0)]).unwrap();
        let rates = RateTable::build(&t, &params(1e-12, 2.0)).unwrap();
        assert!(rates.direct(NodeId(0)) < 1e-11);
    }

    #[test]
    fn coincident_nodes_are_clamped() {
        let t = Topology::new(vec![Point::new(0.5, 0.0), Point::new(0.5, 0.0)]).unwrap();
        let rates = RateTable::build(&t, &params(1.0, 2.0)).unwrap();
        let r = rates.pair(NodeId(0), NodeId(1));
        assert!(r.is_finite());
        assert!((r - (1.0 + 1e12f64).log2()).abs() < 1e-9);
    }

    #[test]
    fn text_format_parses_header_and_rejects_garbage() {
        let t = Topology::generate(4, 77).unwrap();
        let text = t.to_text();
        assert!(text.contains("# generator n=4 seed=77"));
        assert_eq!(Topology::from_text(&text).unwrap(), t);

        assert!(matches!(Topology::from_text("0 1.0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Topology::from_text("0 1 0\n2 0 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Topology::from_text("0 abc 0\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn rate_table_rejects_asymmetry() {
        let pair = vec![0.0, 1.0, 2.0, 0.0];
        assert!(RateTable::from_rates(vec![1.0, 1.0], pair).is_err());
    }

    proptest! {
        #[test]
        fn generated_topologies_are_normalized(n in 1usize..64, seed in any::<u64>()) {
            let t = Topology::generate(n, seed).unwrap();
            prop_assert!((t.max_distance() - 1.0).abs() <= 1e-12);
            prop_assert!(t.nodes().all(|k| t.distance_to_ap(k) > 0.0));
        }

        #[test]
        fn rate_decreases_with_distance(
            a in 1e-3f64..10.0,
            b in 1e-3f64..10.0,
            snr in 1e-3f64..1e4,
            gamma in 0.5f64..4.0,
        ) {
            prop_assume!((a - b).abs() > 1e-9 * a.max(b));
            let p = params(snr, gamma);
            let ra = link_rate(snr_at(a, &p).unwrap()).unwrap();
            let rb = link_rate(snr_at(b, &p).unwrap()).unwrap();
            prop_assert_eq!(a < b, ra > rb);
        }

        #[test]
        fn rate_table_symmetric_and_deterministic(n in 1usize..24, seed in any::<u64>(), snr in 0.1f64..1000.0) {
            let p = params(snr, 2.0);
            let t = Topology::generate(n, seed).unwrap();
            let r1 = RateTable::build(&t, &p).unwrap();
            let r2 = RateTable::build(&Topology::generate(n, seed).unwrap(), &p).unwrap();
            prop_assert_eq!(&r1, &r2);
            for k in r1.nodes() {
                for l in r1.nodes().filter(|l| *l != k) {
                    prop_assert_eq!(r1.pair(k, l).to_bits(), r1.pair(l, k).to_bits());
                    prop_assert!(r1.pair(k, l).is_finite());
                }
            }
        }

        #[test]
        fn text_round_trip(n in 1usize..30, seed in any::<u64>()) {
            let t = Topology::generate(n, seed).unwrap();
            prop_assert_eq!(Topology::from_text(&t.to_text()).unwrap(), t);
        }
    }
}
