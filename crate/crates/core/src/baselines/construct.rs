use crate::error::{Error, Result};
use crate::mdp::{Action, FleetState, Solution};
use crate::problem::{distance_matrix, Instance};

/// Repeatedly lets the vehicle with the smallest clock drive to its nearest
/// feasible customer, reloading when nothing fits.
pub fn greedy_construction(instance: &Instance) -> Result<Solution> {
    let dist = distance_matrix(instance);
    let mut state = FleetState::new(instance, &dist);
    let m = instance.n_vehicles();
    while !state.is_terminal() {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|a, b| state.clock[*a].total_cmp(&state.clock[*b]).then(a.cmp(b)));
        let mut moved = false;
        for v in order {
            let here = state.location[v];
            let nearest = (1..instance.n_nodes())
                .filter(|j| state.is_feasible(v, *j))
                .min_by(|a, b| dist.get(here, *a).total_cmp(&dist.get(here, *b)).then(a.cmp(b)));
            if let Some(j) = nearest {
                state.step(Action::new(v, j))?;
                moved = true;
                break;
            }
            let cap = instance.vehicles[v].capacity;
            let useful = state.remaining_demand.iter().skip(1).any(|d| *d > 0 && *d <= cap);
            if here != 0 && useful {
                state.step(Action::new(v, 0))?;
                moved = true;
                break;
            }
        }
        if !moved {
            return Err(Error::Instance(format!(
                "no vehicle can serve the remaining customers of {}",
                instance.id
            )));
        }
    }
    let (_, solution) = state.finalize()?;
    Ok(solution)
}
