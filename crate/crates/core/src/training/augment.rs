use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::Instance;

/// Number of coordinate maps of the unit square used for augmentation.
pub const TRANSFORM_COUNT: usize = 8;

/// Applies map `index` of the eight reflections/rotations of the unit square.
pub fn node_transform(point: [f64; 2], index: usize) -> Result<[f64; 2]> {
    let [x, y] = point;
    Ok(match index {
        0 => [x, y],
        1 => [y, x],
        2 => [x, 1.0 - y],
        3 => [y, 1.0 - x],
        4 => [1.0 - x, y],
        5 => [1.0 - y, x],
        6 => [1.0 - x, 1.0 - y],
        7 => [1.0 - y, 1.0 - x],
        _ => return Err(Error::Contract(format!("transform index {index} is outside 0..8"))),
    })
}

/// Applies a coordinate map to the depot and every customer.
pub fn transform_instance(instance: &Instance, index: usize) -> Result<Instance> {
    let mut out = instance.clone();
    out.depot = node_transform(instance.depot, index)?;
    for c in &mut out.customers {
        [c.x, c.y] = node_transform([c.x, c.y], index)?;
    }
    Ok(out)
}

/// One augmented copy of a base instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    /// Index of the base instance within its batch.
    pub base: usize,
    pub transform: usize,
    /// New vehicle `i` is base vehicle `permutation[i]`.
    pub permutation: Vec<usize>,
    pub instance: Instance,
}

/// `K` variants of each base instance, grouped by base instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub k: usize,
    pub variants: Vec<Variant>,
}

impl AugmentedBatch {
    pub fn base_count(&self) -> usize {
        self.variants.len() / self.k
    }

    pub fn instances(&self) -> Vec<&Instance> {
        self.variants.iter().map(|v| &v.instance).collect()
    }
}

/// Builds `k` variants: variant `v` applies transform `v` and, except for
/// variant 0 or when `vehicle_augment` is off, a uniform vehicle permutation.
pub fn augment_instance<R: Rng>(
    instance: &Instance,
    base: usize,
    k: usize,
    vehicle_augment: bool,
    rng: &mut R,
) -> Result<Vec<Variant>> {
    if k == 0 || k > TRANSFORM_COUNT {
        return Err(Error::Config(format!("augmentation count {k} must lie in 1..=8")));
    }
    let m = instance.n_vehicles();
    (0..k)
        .map(|v| {
            let mut permutation: Vec<usize> = (0..m).collect();
            if v > 0 && vehicle_augment {
                permutation.shuffle(rng);
            }
            let instance = transform_instance(instance, v)?.permute_vehicles(&permutation)?;
            Ok(Variant {
                base,
                transform: v,
                permutation,
                instance,
            })
        })
        .collect()
}

pub fn augment_batch<R: Rng>(
    instances: &[Instance],
    k: usize,
    vehicle_augment: bool,
    rng: &mut R,
) -> Result<AugmentedBatch> {
    let mut variants = Vec::with_capacity(instances.len() * k);
    for (b, inst) in instances.iter().enumerate() {
        variants.extend(augment_instance(inst, b, k, vehicle_augment, rng)?);
    }
    Ok(AugmentedBatch { k, variants })
}

/// Re-indexes per-vehicle routes of the base instance for a permuted fleet.
pub fn permute_routes(routes: &[Vec<usize>], permutation: &[usize]) -> Vec<Vec<usize>> {
    permutation.iter().map(|p| routes[*p].clone()).collect()
}

/// Maps routes of a permuted fleet back to base vehicle order.
pub fn unpermute_routes(routes: &[Vec<usize>], permutation: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); routes.len()];
    for (i, p) in permutation.iter().enumerate() {
        out[*p] = routes[i].clone();
    }
    out
}
