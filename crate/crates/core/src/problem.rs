//! Problem instances: fleet, depot and customers, their generators and the
//! on-disk instance format.

use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    Clustered,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform => f.write_str("uniform"),
            Distribution::Clustered => f.write_str("clustered"),
        }
    }
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "clustered" => Ok(Distribution::Clustered),
            other => Err(Error::Config(format!("unknown distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub x: f64,
    pub y: f64,
    pub demand: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub capacity: u32,
    pub speed: f64,
}

/// An immutable min-max heterogeneous CVRP instance.
///
/// Node index 0 is the depot, customers occupy indices `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub distribution: Distribution,
    pub depot: [f64; 2],
    pub customers: Vec<Customer>,
    pub vehicles: Vec<Vehicle>,
}

impl Instance {
    /// Builds an instance and checks its invariants.
    pub fn new(
        id: impl Into<String>,
        distribution: Distribution,
        depot: [f64; 2],
        customers: Vec<Customer>,
        vehicles: Vec<Vehicle>,
    ) -> Result<Self> {
        let instance = Instance {
            id: id.into(),
            distribution,
            depot,
            customers,
            vehicles,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.customers.is_empty() {
            return Err(Error::Instance("at least one customer is required".into()));
        }
        if self.vehicles.is_empty() {
            return Err(Error::Instance("at least one vehicle is required".into()));
        }
        if !self.depot.iter().all(|c| c.is_finite()) {
            return Err(Error::Instance("depot coordinates must be finite".into()));
        }
        let max_capacity = self.vehicles.iter().map(|v| v.capacity).max().unwrap_or(0);
        for (i, v) in self.vehicles.iter().enumerate() {
            if !(v.speed.is_finite() && v.speed > 0.0) {
                return Err(Error::Instance(format!("vehicle {i} has non-positive speed")));
            }
            if v.capacity == 0 {
                return Err(Error::Instance(format!("vehicle {i} has zero capacity")));
            }
        }
        for (k, c) in self.customers.iter().enumerate() {
            if !(c.x.is_finite() && c.y.is_finite()) {
                return Err(Error::Instance(format!("customer {} has non-finite coordinates", k + 1)));
            }
            if c.demand == 0 {
                return Err(Error::Instance(format!("customer {} has zero demand", k + 1)));
            }
            if c.demand > max_capacity {
                return Err(Error::Instance(format!(
                    "customer {} demand {} exceeds the largest capacity {max_capacity}",
                    k + 1,
                    c.demand
                )));
            }
        }
        Ok(())
    }

    pub fn n_customers(&self) -> usize {
        self.customers.len()
    }

    /// Depot plus customers.
    pub fn n_nodes(&self) -> usize {
        self.customers.len() + 1
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        if node == 0 {
            self.depot
        } else {
            let c = &self.customers[node - 1];
            [c.x, c.y]
        }
    }

    /// Static demand of a node; the depot has none.
    pub fn demand(&self, node: usize) -> u32 {
        if node == 0 {
            0
        } else {
            self.customers[node - 1].demand
        }
    }

    pub fn total_demand(&self) -> u64 {
        self.customers.iter().map(|c| u64::from(c.demand)).sum()
    }

    /// Returns a copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Instance {
        let mut out = self.clone();
        out.depot = [self.depot[0] * factor, self.depot[1] * factor];
        for c in &mut out.customers {
            c.x *= factor;
            c.y *= factor;
        }
        out
    }

    /// Relabels customers: new customer `k` (node `k + 1`) is old customer
    /// `order[k]` (node `order[k] + 1`).
    pub fn permute_customers(&self, order: &[usize]) -> Result<Instance> {
        check_permutation(order, self.customers.len())?;
        let mut out = self.clone();
        out.customers = order.iter().map(|o| self.customers[*o]).collect();
        Ok(out)
    }

    /// Reorders the fleet: new vehicle `i` is old vehicle `order[i]`.
    pub fn permute_vehicles(&self, order: &[usize]) -> Result<Instance> {
        check_permutation(order, self.vehicles.len())?;
        let mut out = self.clone();
        out.vehicles = order.iter().map(|o| self.vehicles[*o]).collect();
        Ok(out)
    }
}

/// Checks that `order` is a permutation of `0..len`.
pub fn check_permutation(order: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    if order.len() != len {
        return Err(Error::Contract(format!("permutation of length {} for {len} items", order.len())));
    }
    for &o in order {
        if o >= len || std::mem::replace(&mut seen[o], true) {
            return Err(Error::Contract(format!("{order:?} is not a permutation")));
        }
    }
    Ok(())
}

/// Euclidean distances between all nodes, depot at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.size + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.size..(a + 1) * self.size]
    }
}

pub fn distance_matrix(instance: &Instance) -> DistanceMatrix {
    let size = instance.n_nodes();
    let coords: Vec<[f64; 2]> = (0..size).map(|j| instance.coords(j)).collect();
    let mut data = vec![0.0; size * size];
    for a in 0..size {
        for b in (a + 1)..size {
            let d = (coords[a][0] - coords[b][0]).hypot(coords[a][1] - coords[b][1]);
            data[a * size + b] = d;
            data[b * size + a] = d;
        }
    }
    DistanceMatrix { size, data }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_customers: usize,
    pub n_vehicles: usize,
    pub demand_range: RangeInclusive<u32>,
    pub capacity_range: RangeInclusive<u32>,
    pub speed_interval: (f64, f64),
    pub distribution: Distribution,
    pub cluster_count: usize,
    pub cluster_noise_sigma: f64,
    pub seed: u64,
    /// Permits capacity ranges that may not cover every demand.
    #[serde(default)]
    pub allow_unsolvable: bool,
}

impl GenConfig {
    pub fn new(n_customers: usize, n_vehicles: usize, seed: u64) -> Self {
        GenConfig {
            n_customers,
            n_vehicles,
            demand_range: 1..=9,
            capacity_range: 20..=40,
            speed_interval: (0.5, 1.0),
            distribution: Distribution::Uniform,
            cluster_count: 3,
            cluster_noise_sigma: 0.05,
            seed,
            allow_unsolvable: false,
        }
    }

    pub fn clustered(mut self, sigma: f64) -> Self {
        self.distribution = Distribution::Clustered;
        self.cluster_noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_customers == 0 || self.n_vehicles == 0 {
            return Err(Error::Config("need at least one customer and one vehicle".into()));
        }
        if self.demand_range.is_empty() || *self.demand_range.start() == 0 {
            return Err(Error::Config("demand range must be non-empty and positive".into()));
        }
        if self.capacity_range.is_empty() || *self.capacity_range.start() == 0 {
            return Err(Error::Config("capacity range must be non-empty and positive".into()));
        }
        let (lo, hi) = self.speed_interval;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::Config("speed interval must be positive and ordered".into()));
        }
        if self.distribution == Distribution::Clustered {
            if self.cluster_count == 0 {
                return Err(Error::Config("cluster count must be positive".into()));
            }
            if !(self.cluster_noise_sigma.is_finite() && self.cluster_noise_sigma > 0.0) {
                return Err(Error::Config("cluster noise sigma must be positive".into()));
            }
        }
        if !self.allow_unsolvable && self.capacity_range.start() < self.demand_range.end() {
            return Err(Error::Config(format!(
                "smallest capacity {} is below the largest demand {}; set allow_unsolvable to override",
                self.capacity_range.start(),
                self.demand_range.end()
            )));
        }
        Ok(())
    }

    pub fn instance_id(&self) -> String {
        format!(
            "{}-m{}-n{}-s{}",
            self.distribution, self.n_vehicles, self.n_customers, self.seed
        )
    }
}

pub fn generate_instance(config: &GenConfig) -> Result<Instance> {
    config.validate()?;
    let mut rng = seeds::rng_for(config.seed, 0x1157, 0);
    let depot = [rng.gen::<f64>(), rng.gen::<f64>()];

    let mut customers = Vec::with_capacity(config.n_customers);
    match config.distribution {
        Distribution::Uniform => {
            for _ in 0..config.n_customers {
                let x = rng.gen::<f64>();
                let y = rng.gen::<f64>();
                let demand = rng.gen_range(config.demand_range.clone());
                customers.push(Customer { x, y, demand });
            }
        }
        Distribution::Clustered => {
            let centers: Vec<[f64; 2]> = (0..config.cluster_count)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let noise = Normal::new(0.0, config.cluster_noise_sigma)
                .map_err(|e| Error::Config(e.to_string()))?;
            for _ in 0..config.n_customers {
                let center = centers[rng.gen_range(0..centers.len())];
                let x = (center[0] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                let y = (center[1] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                let demand = rng.gen_range(config.demand_range.clone());
                customers.push(Customer { x, y, demand });
            }
        }
    }

    let (lo, hi) = config.speed_interval;
    let vehicles = (0..config.n_vehicles)
        .map(|_| Vehicle {
            capacity: rng.gen_range(config.capacity_range.clone()),
            speed: if lo == hi { lo } else { rng.gen_range(lo..=hi) },
        })
        .collect();

    let instance = Instance {
        id: config.instance_id(),
        distribution: config.distribution,
        depot,
        customers,
        vehicles,
    };
    if !config.allow_unsolvable {
        instance.validate()?;
    }
    Ok(instance)
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    format_version: u32,
    id: String,
    distribution: Distribution,
    depot: [f64; 2],
    customers: Vec<Customer>,
    vehicles: Vec<Vehicle>,
}

#[derive(Debug, Deserialize)]
struct RawCustomer {
    x: f64,
    y: f64,
    demand: i64,
}

#[derive(Debug, Deserialize)]
struct RawVehicle {
    capacity: i64,
    speed: f64,
}

#[derive(Debug, Deserialize)]
struct RawInstanceRecord {
    format_version: u32,
    id: String,
    distribution: Distribution,
    depot: [f64; 2],
    customers: Vec<RawCustomer>,
    vehicles: Vec<RawVehicle>,
}

pub fn instance_to_string(instance: &Instance) -> String {
    let record = InstanceRecord {
        format_version: INSTANCE_FORMAT_VERSION,
        id: instance.id.clone(),
        distribution: instance.distribution,
        depot: instance.depot,
        customers: instance.customers.clone(),
        vehicles: instance.vehicles.clone(),
    };
    let mut text = serde_json::to_string_pretty(&record).expect("instance record serializes");
    text.push('\n');
    text
}

pub fn instance_from_str(text: &str, path: &Path) -> Result<Instance> {
    let raw: RawInstanceRecord =
        serde_json::from_str(text).map_err(|e| Error::format(path, e))?;
    if raw.format_version != INSTANCE_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "unsupported format_version {} (expected {INSTANCE_FORMAT_VERSION})",
                raw.format_version
            ),
        ));
    }
    let customers = raw
        .customers
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let demand = u32::try_from(c.demand)
                .ok()
                .filter(|d| *d > 0)
                .ok_or_else(|| Error::Instance(format!("customer {} has invalid demand {}", k + 1, c.demand)))?;
            Ok(Customer { x: c.x, y: c.y, demand })
        })
        .collect::<Result<Vec<_>>>()?;
    let vehicles = raw
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let capacity = u32::try_from(v.capacity)
                .ok()
                .filter(|c| *c > 0)
                .ok_or_else(|| Error::Instance(format!("vehicle {i} has invalid capacity {}", v.capacity)))?;
            Ok(Vehicle { capacity, speed: v.speed })
        })
        .collect::<Result<Vec<_>>>()?;
    Instance::new(raw.id, raw.distribution, raw.depot, customers, vehicles)
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, instance_to_string(instance)).map_err(|e| Error::io(path, e))
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    instance_from_str(&text, path)
}
