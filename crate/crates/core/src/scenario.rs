//! City tasks: loading, synthetic generation, demand sampling and disturbances.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};

/// A per-origin/destination quantity indexed by time step, stored as `[t][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdSeries<T> {
    n: usize,
    steps: usize,
    data: Vec<T>,
}

impl<T: Copy> OdSeries<T> {
    pub fn filled(n: usize, steps: usize, value: T) -> Self {
        OdSeries {
            n,
            steps,
            data: vec![value; n * n * steps],
        }
    }

    /// Builds a series that repeats one `n x n` matrix for every step.
    pub fn from_static(matrix: &[Vec<T>], steps: usize) -> Self {
        let n = matrix.len();
        let mut data = Vec::with_capacity(n * n * steps);
        for _ in 0..steps {
            for row in matrix {
                data.extend_from_slice(row);
            }
        }
        OdSeries { n, steps, data }
    }

    pub fn from_fn(n: usize, steps: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n * steps);
        for t in 0..steps {
            for i in 0..n {
                for j in 0..n {
                    data.push(f(i, j, t));
                }
            }
        }
        OdSeries { n, steps, data }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, t: usize) -> usize {
        debug_assert!(i < self.n && j < self.n && t < self.steps);
        (t * self.n + i) * self.n + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> T {
        self.data[self.idx(i, j, t)]
    }

    /// Value at `t`, clamped to the last stored step. Planners look past the
    /// episode end and treat the final step as persistent.
    #[inline]
    pub fn get_clamped(&self, i: usize, j: usize, t: usize) -> T {
        self.get(i, j, t.min(self.steps - 1))
    }

    pub fn set(&mut self, i: usize, j: usize, t: usize, value: T) {
        let k = self.idx(i, j, t);
        self.data[k] = value;
    }

    pub fn update(&mut self, i: usize, j: usize, t: usize, f: impl FnOnce(T) -> T) {
        let k = self.idx(i, j, t);
        self.data[k] = f(self.data[k]);
    }

    pub fn stations(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The `n x n` slice for step `t`, row-major.
    pub fn at_step(&self, t: usize) -> &[T] {
        let nn = self.n * self.n;
        &self.data[t * nn..(t + 1) * nn]
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }
}

impl<T: Copy + PartialEq> OdSeries<T> {
    pub fn is_time_invariant(&self) -> bool {
        (1..self.steps).all(|t| self.at_step(t) == self.at_step(0))
    }
}

/// How realized demand is drawn from the rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandModel {
    /// Independent Poisson counts per OD pair and step.
    #[default]
    Poisson,
    /// Demand equals the rate rounded to the nearest integer.
    Deterministic,
}

/// One task: a station graph with travel times, prices, costs and demand rates.
#[derive(Clone, Debug, PartialEq)]
pub struct City {
    pub id: String,
    pub num_stations: usize,
    /// Row-major `N x N`; `adjacency[i * N + j]` is an edge `i -> j`.
    pub adjacency: Vec<bool>,
    pub travel_time: OdSeries<u32>,
    pub price: OdSeries<f64>,
    pub cost: OdSeries<f64>,
    pub demand_rate: OdSeries<f64>,
    pub fleet_size: u32,
    pub episode_length: usize,
    pub step_minutes: f64,
    pub demand_model: DemandModel,
}

/// Integral demand counts for one step, row-major `N x N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemandMatrix {
    pub n: usize,
    pub counts: Vec<u32>,
}

impl DemandMatrix {
    pub fn zeros(n: usize) -> Self {
        DemandMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n + j]
    }

    pub fn outbound(&self, i: usize) -> u32 {
        self.counts[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn inbound(&self, j: usize) -> u32 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

impl City {
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.num_stations + j]
    }

    /// Profit margin `p - c` of serving one passenger on `(i, j)` at `t`.
    #[inline]
    pub fn margin(&self, i: usize, j: usize, t: usize) -> f64 {
        self.price.get(i, j, t) - self.cost.get(i, j, t)
    }

    /// Checks every structural and numeric invariant, reporting the first
    /// offending field and index.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_stations;
        let steps = self.episode_length;
        if n == 0 {
            return Err(Error::invariant("num_stations", "must be at least 1"));
        }
        if steps == 0 {
            return Err(Error::invariant("episode_length", "must be at least 1"));
        }
        if !(self.step_minutes.is_finite() && self.step_minutes > 0.0) {
            return Err(Error::invariant("step_minutes", "must be positive and finite"));
        }
        if self.adjacency.len() != n * n {
            return Err(Error::invariant("adjacency", format!("expected {} entries", n * n)));
        }
        let dims_ok = |name: &str, sn: usize, st: usize| -> Result<()> {
            if sn != n || st != steps {
                Err(Error::invariant(
                    name,
                    format!("dimensioned {sn}x{sn}x{st}, expected {n}x{n}x{steps}"),
                ))
            } else {
                Ok(())
            }
        };
        dims_ok("travel_time", self.travel_time.n, self.travel_time.steps)?;
        dims_ok("price", self.price.n, self.price.steps)?;
        dims_ok("cost", self.cost.n, self.cost.steps)?;
        dims_ok("demand_rate", self.demand_rate.n, self.demand_rate.steps)?;

        for t in 0..steps {
            for i in 0..n {
                for j in 0..n {
                    let at = || format!("[{i}][{j}][{t}]");
                    if self.travel_time.get(i, j, t) < 1 {
                        return Err(Error::invariant_at("travel_time", at(), "must be >= 1"));
                    }
                    for (name, series) in [
                        ("price", &self.price),
                        ("cost", &self.cost),
                        ("demand_rate", &self.demand_rate),
                    ] {
                        let v = series.get(i, j, t);
                        if !(v.is_finite() && v >= 0.0) {
                            return Err(Error::invariant_at(
                                name,
                                at(),
                                format!("must be finite and nonnegative, got {v}"),
                            ));
                        }
                    }
                }
            }
        }
        if !self.strongly_connected() {
            return Err(Error::invariant(
                "adjacency",
                "graph is not connected (some station unreachable)",
            ));
        }
        Ok(())
    }

    fn reachable_from(&self, src: usize, reverse: bool) -> Vec<bool> {
        let n = self.num_stations;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([src]);
        seen[src] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let edge = if reverse { self.has_edge(v, u) } else { self.has_edge(u, v) };
                if edge && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn strongly_connected(&self) -> bool {
        self.num_stations == 0
            || (self.reachable_from(0, false).iter().all(|&s| s)
                && self.reachable_from(0, true).iter().all(|&s| s))
    }

    /// A per-city currency scale used to normalize features: mean price over
    /// OD pairs with positive demand rate (falls back to mean price).
    pub fn price_scale(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in 0..self.episode_length {
            for k in 0..self.num_stations * self.num_stations {
                if self.demand_rate.at_step(t)[k] > 0.0 {
                    sum += self.price.at_step(t)[k];
                    count += 1;
                }
            }
        }
        if count == 0 || sum <= 0.0 {
            let all = self.price.values();
            sum = all.iter().sum();
            count = all.len();
        }
        if sum > 0.0 {
            sum / count as f64
        } else {
            1.0
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<City> {
        let text = std::fs::read_to_string(path)?;
        City::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<City> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.into_city()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from_city(self))
            .expect("scenario serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<City> {
    City::load(path)
}

// ---------------------------------------------------------------------------
// Scenario JSON schema

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixInput<T> {
    Static(Vec<Vec<T>>),
    Temporal(Vec<Vec<Vec<T>>>),
}

impl<T: Copy> MatrixInput<T> {
    fn into_series(self, field: &str, n: usize, steps: usize) -> Result<OdSeries<T>> {
        let dim_err = |what: String| Error::invariant(field, what);
        match self {
            MatrixInput::Static(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(dim_err(format!("expected an {n}x{n} matrix")));
                }
                Ok(OdSeries::from_static(&rows, steps))
            }
            MatrixInput::Temporal(cube) => {
                if cube.len() != n
                    || cube.iter().any(|r| r.len() != n || r.iter().any(|c| c.len() != steps))
                {
                    return Err(dim_err(format!("expected an {n}x{n}x{steps} array")));
                }
                Ok(OdSeries::from_fn(n, steps, |i, j, t| cube[i][j][t]))
            }
        }
    }
}

impl<T: Copy + PartialEq> MatrixInput<T> {
    fn from_series(series: &OdSeries<T>) -> Self {
        let n = series.n;
        if series.is_time_invariant() {
            MatrixInput::Static(
                (0..n)
                    .map(|i| (0..n).map(|j| series.get(i, j, 0)).collect())
                    .collect(),
            )
        } else {
            MatrixInput::Temporal(
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| (0..series.steps).map(|t| series.get(i, j, t)).collect())
                            .collect()
                    })
                    .collect(),
            )
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    id: String,
    num_stations: usize,
    adjacency: Vec<[usize; 2]>,
    travel_time: MatrixInput<i64>,
    price: MatrixInput<f64>,
    cost: MatrixInput<f64>,
    demand_rate: MatrixInput<f64>,
    fleet_size: u32,
    episode_length: usize,
    step_minutes: f64,
    #[serde(default)]
    demand_model: DemandModel,
}

impl ScenarioFile {
    fn into_city(self) -> Result<City> {
        let n = self.num_stations;
        let steps = self.episode_length;
        let mut adjacency = vec![false; n * n];
        for (k, &[i, j]) in self.adjacency.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::invariant_at(
                    "adjacency",
                    format!("[{k}]"),
                    format!("edge [{i}, {j}] references a missing station"),
                ));
            }
            adjacency[i * n + j] = true;
        }
        let tt = self.travel_time.into_series("travel_time", n, steps)?;
        if let Some(pos) = tt.data.iter().position(|&v| v < 1 || v > u32::MAX as i64) {
            let (t, rem) = (pos / (n * n), pos % (n * n));
            return Err(Error::invariant_at(
                "travel_time",
                format!("[{}][{}][{t}]", rem / n, rem % n),
                format!("must be a positive integer, got {}", tt.data[pos]),
            ));
        }
        let city = City {
            id: self.id,
            num_stations: n,
            adjacency,
            travel_time: OdSeries {
                n: tt.n,
                steps: tt.steps,
                data: tt.data.iter().map(|&v| v as u32).collect(),
            },
            price: self.price.into_series("price", n, steps)?,
            cost: self.cost.into_series("cost", n, steps)?,
            demand_rate: self.demand_rate.into_series("demand_rate", n, steps)?,
            fleet_size: self.fleet_size,
            episode_length: steps,
            step_minutes: self.step_minutes,
            demand_model: self.demand_model,
        };
        city.validate()?;
        Ok(city)
    }

    fn from_city(city: &City) -> Self {
        let n = city.num_stations;
        let adjacency = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| city.has_edge(i, j))
            .map(|(i, j)| [i, j])
            .collect();
        let tt = OdSeries {
            n,
            steps: city.travel_time.steps,
            data: city.travel_time.data.iter().map(|&v| v as i64).collect(),
        };
        ScenarioFile {
            id: city.id.clone(),
            num_stations: n,
            adjacency,
            travel_time: MatrixInput::from_series(&tt),
            price: MatrixInput::from_series(&city.price),
            cost: MatrixInput::from_series(&city.cost),
            demand_rate: MatrixInput::from_series(&city.demand_rate),
            fleet_size: city.fleet_size,
            episode_length: city.episode_length,
            step_minutes: city.step_minutes,
            demand_model: city.demand_model,
        }
    }
}

// ---------------------------------------------------------------------------
// Demand

/// Samples one step of demand. Each entry is an independent Poisson count
/// with mean `λ[i][j][t]` (or the rounded rate for deterministic cities).
pub fn sample_demand(city: &City, t: usize, rng: &mut Rng) -> DemandMatrix {
    let n = city.num_stations;
    let rates = city.demand_rate.at_step(t);
    let counts = rates
        .iter()
        .map(|&rate| match city.demand_model {
            DemandModel::Deterministic => rate.round() as u32,
            DemandModel::Poisson if rate > 0.0 => {
                let dist = Poisson::new(rate).expect("rate is positive and finite");
                dist.sample(rng) as u32
            }
            DemandModel::Poisson => 0,
        })
        .collect();
    DemandMatrix { n, counts }
}

// ---------------------------------------------------------------------------
// Synthetic cities

/// Ranges for the synthetic task distribution. The defaults bracket the
/// statistics of real-world city scenarios (10-23 stations, 6-22 minute
/// average trips, 79-2729 vehicles); [`SynthCityParams::desk_scale`] is a
/// small preset for fast experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCityParams {
    pub node_range: [usize; 2],
    /// Average trip time between distinct stations, minutes.
    pub avg_trip_minutes: [f64; 2],
    /// Total request rate over all OD pairs, requests per hour.
    pub demand_per_hour: [f64; 2],
    pub fleet_range: [u32; 2],
    pub step_minutes: f64,
    pub episode_length: usize,
    /// Cost per step of travel: `c = cost_per_step * τ`.
    pub cost_per_step: f64,
    /// Fraction of OD pairs whose price covers the cost.
    pub profitable_fraction: f64,
    /// Relative margin over cost on profitable pairs.
    pub margin_range: [f64; 2],
    /// Flat fare added to profitable prices.
    pub base_fare: f64,
    /// Number of demand hot-spot stations.
    pub attractor_range: [usize; 2],
    /// Multiplier on inbound demand of hot-spot stations.
    pub attractor_boost: [f64; 2],
    /// Probability of an extra undirected edge on top of the spanning tree.
    pub edge_probability: f64,
    /// Relative amplitude of the time-of-day demand wave.
    pub demand_wave: f64,
    pub demand_model: DemandModel,
}

impl Default for SynthCityParams {
    fn default() -> Self {
        SynthCityParams {
            node_range: [10, 23],
            avg_trip_minutes: [6.0, 22.0],
            demand_per_hour: [177.0, 11446.0],
            fleet_range: [79, 2729],
            step_minutes: 3.0,
            episode_length: 20,
            cost_per_step: 0.5,
            profitable_fraction: 0.8,
            margin_range: [0.2, 1.0],
            base_fare: 1.0,
            attractor_range: [1, 3],
            attractor_boost: [2.0, 4.0],
            edge_probability: 0.3,
            demand_wave: 0.2,
            demand_model: DemandModel::Poisson,
        }
    }
}

impl SynthCityParams {
    /// Small cities that simulate in microseconds per step.
    pub fn desk_scale() -> Self {
        SynthCityParams {
            node_range: [4, 8],
            avg_trip_minutes: [6.0, 12.0],
            demand_per_hour: [150.0, 300.0],
            fleet_range: [20, 40],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
            if r[0] > r[1] {
                return Err(Error::invariant(name, format!("degenerate range {r:?} (min > max)")));
            }
            Ok(())
        }
        range("node_range", &self.node_range)?;
        range("avg_trip_minutes", &self.avg_trip_minutes)?;
        range("demand_per_hour", &self.demand_per_hour)?;
        range("fleet_range", &self.fleet_range)?;
        range("margin_range", &self.margin_range)?;
        range("attractor_range", &self.attractor_range)?;
        range("attractor_boost", &self.attractor_boost)?;
        if self.node_range[0] < 2 {
            return Err(Error::invariant("node_range", "cities need at least 2 stations"));
        }
        if self.avg_trip_minutes[0] <= 0.0 || self.step_minutes <= 0.0 {
            return Err(Error::invariant("avg_trip_minutes", "times must be positive"));
        }
        if self.episode_length == 0 {
            return Err(Error::invariant("episode_length", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.profitable_fraction) {
            return Err(Error::invariant("profitable_fraction", "must lie in [0, 1]"));
        }
        if self.demand_per_hour[0] < 0.0 || self.cost_per_step < 0.0 || self.base_fare < 0.0 {
            return Err(Error::invariant("demand_per_hour", "rates and prices must be nonnegative"));
        }
        Ok(())
    }
}

fn uniform_f64(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Generates a random city. Deterministic in `seed`.
pub fn generate_synthetic_city(params: &SynthCityParams, seed: u64) -> Result<City> {
    params.validate()?;
    let mut rng = rng_from(&[0xC17E, seed]);
    let n = rng.random_range(params.node_range[0]..=params.node_range[1]);
    let steps = params.episode_length;

    // Geometry: stations scattered in the unit square, travel time proportional
    // to distance and scaled to hit the sampled average trip time.
    let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let dist = |i: usize, j: usize| {
        let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
        (dx * dx + dy * dy).sqrt().max(0.05)
    };
    let mean_dist = {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += dist(i, j);
                }
            }
        }
        s / (n * (n - 1)) as f64
    };
    let avg_trip = uniform_f64(&mut rng, params.avg_trip_minutes);
    let minutes_per_unit = avg_trip / mean_dist;
    let tau: Vec<u32> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                1
            } else {
                ((dist(i, j) * minutes_per_unit / params.step_minutes).round() as u32).max(1)
            }
        })
        .collect();

    // Topology: random spanning tree plus Erdős–Rényi extras, undirected, with self-loops.
    let mut adjacency = vec![false; n * n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for k in 0..n {
        adjacency[k * n + k] = true;
    }
    for idx in 1..n {
        let u = order[idx];
        let v = order[rng.random_range(0..idx)];
        adjacency[u * n + v] = true;
        adjacency[v * n + u] = true;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < params.edge_probability {
                adjacency[i * n + j] = true;
                adjacency[j * n + i] = true;
            }
        }
    }

    // Demand: origin/destination weights, with hot-spot stations attracting
    // extra inbound demand so that flows are asymmetric.
    let total_per_step =
        uniform_f64(&mut rng, params.demand_per_hour) * params.step_minutes / 60.0;
    let origin_w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut dest_w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let attractors =
        rng.random_range(params.attractor_range[0]..=params.attractor_range[1]).min(n);
    let mut stations: Vec<usize> = (0..n).collect();
    stations.shuffle(&mut rng);
    for &s in &stations[..attractors] {
        dest_w[s] *= uniform_f64(&mut rng, params.attractor_boost);
    }
    let mut weight_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                weight_sum += origin_w[i] * dest_w[j];
            }
        }
    }
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wave: Vec<f64> = (0..steps)
        .map(|t| {
            1.0 + params.demand_wave
                * (std::f64::consts::TAU * t as f64 / steps as f64 + phase).sin()
        })
        .collect();

    // Prices: cost-plus on profitable pairs, below cost elsewhere.
    let cost: Vec<f64> = tau.iter().map(|&t| params.cost_per_step * t as f64).collect();
    let price: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                return cost[k];
            }
            if rng.random::<f64>() < params.profitable_fraction {
                let margin = uniform_f64(&mut rng, params.margin_range);
                (1.0 + margin) * cost[k] + params.base_fare
            } else {
                cost[k] * rng.random_range(0.5..1.0)
            }
        })
        .collect();
    let fleet_size = rng.random_range(params.fleet_range[0]..=params.fleet_range[1]);

    let city = City {
        id: format!("synth-{seed}"),
        num_stations: n,
        adjacency,
        travel_time: OdSeries::from_fn(n, steps, |i, j, _| tau[i * n + j]),
        price: OdSeries::from_fn(n, steps, |i, j, _| price[i * n + j]),
        cost: OdSeries::from_fn(n, steps, |i, j, _| cost[i * n + j]),
        demand_rate: OdSeries::from_fn(n, steps, |i, j, t| {
            if i == j {
                0.0
            } else {
                total_per_step * wave[t] * origin_w[i] * dest_w[j] / weight_sum
            }
        }),
        fleet_size,
        episode_length: steps,
        step_minutes: params.step_minutes,
        demand_model: params.demand_model,
    };
    city.validate()?;
    Ok(city)
}

// ---------------------------------------------------------------------------
// Disturbances

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisturbanceKind {
    SpecialEvent,
    PriceChange,
    Congestion,
}

/// Default demand multiplier applied away from a special event's stations.
pub const DEFAULT_EVENT_BACKGROUND: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub target_stations: Vec<usize>,
    pub multiplier: f64,
    /// Special events only: multiplier on demand not touching the targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_multiplier: Option<f64>,
    /// Inclusive `[t_start, t_end]`; the whole episode when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<[usize; 2]>,
}

impl Disturbance {
    pub fn new(kind: DisturbanceKind, targets: Vec<usize>, multiplier: f64) -> Self {
        Disturbance {
            kind,
            target_stations: targets,
            multiplier,
            secondary_multiplier: None,
            time_window: None,
        }
    }

    pub fn validate(&self, city: &City) -> Result<()> {
        if self.target_stations.is_empty() {
            return Err(Error::invariant("target_stations", "empty target set"));
        }
        if let Some(&s) = self.target_stations.iter().find(|&&s| s >= city.num_stations) {
            return Err(Error::invariant(
                "target_stations",
                format!("station {s} out of range for {} stations", city.num_stations),
            ));
        }
        for (name, m) in [
            ("multiplier", Some(self.multiplier)),
            ("secondary_multiplier", self.secondary_multiplier),
        ] {
            if let Some(m) = m {
                if !(m.is_finite() && m > 0.0) {
                    return Err(Error::invariant(name, format!("must be positive, got {m}")));
                }
            }
        }
        if let Some([a, b]) = self.time_window {
            if a > b || b >= city.episode_length {
                return Err(Error::invariant(
                    "time_window",
                    format!("[{a}, {b}] outside [0, {})", city.episode_length),
                ));
            }
        }
        Ok(())
    }

    fn window(&self, steps: usize) -> std::ops::RangeInclusive<usize> {
        let [a, b] = self.time_window.unwrap_or([0, steps - 1]);
        a..=b
    }
}

/// Returns a disturbed copy of `city`; the input is left untouched.
pub fn apply_disturbance(city: &City, d: &Disturbance) -> Result<City> {
    d.validate(city)?;
    let n = city.num_stations;
    let mut out = city.clone();
    let mut target = vec![false; n];
    for &s in &d.target_stations {
        target[s] = true;
    }
    let m = d.multiplier;
    for t in d.window(city.episode_length) {
        for i in 0..n {
            for j in 0..n {
                match d.kind {
                    DisturbanceKind::SpecialEvent => {
                        let factor = if target[i] || target[j] {
                            m
                        } else {
                            d.secondary_multiplier.unwrap_or(DEFAULT_EVENT_BACKGROUND)
                        };
                        if factor != 1.0 {
                            out.demand_rate.update(i, j, t, |v| v * factor);
                        }
                    }
                    DisturbanceKind::PriceChange => {
                        if (target[i] || target[j]) && m != 1.0 {
                            out.price.update(i, j, t, |v| v * m);
                        }
                    }
                    DisturbanceKind::Congestion => {
                        if target[j] && m != 1.0 {
                            out.travel_time.update(i, j, t, |v| {
                                ((v as f64 * m - 1e-9).ceil() as u32).max(1)
                            });
                        }
                    }
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Loads a list of disturbances from a JSON file.
pub fn load_disturbances(path: impl AsRef<Path>) -> Result<Vec<Disturbance>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
