use rand::Rng;

use crate::model::SublayerKind;
use crate::search::plan::{PlanSpace, SparsityPlan};

/// Attempts before a mutation gives up and returns its parent.
pub const MAX_MUTATION_RETRIES: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mutation {
    pub plan: SparsityPlan,
    /// False when no feasible shift was found and `plan` is the parent.
    pub changed: bool,
}

/// Shift sparsity between two distinct sublayers of the same kind: one
/// ladder step down on one, one step up on the other.
pub fn mutate<R: Rng + ?Sized>(space: &PlanSpace, parent: &SparsityPlan, rng: &mut R) -> Mutation {
    let pools: Vec<Vec<usize>> = [SublayerKind::Mha, SublayerKind::Ffn]
        .iter()
        .map(|k| (0..space.len()).filter(|&i| space.kinds[i] == *k).collect::<Vec<_>>())
        .filter(|p| p.len() >= 2)
        .collect();
    if !pools.is_empty() {
        for _ in 0..MAX_MUTATION_RETRIES {
            let pool = &pools[rng.random_range(0..pools.len())];
            let a = pool[rng.random_range(0..pool.len())];
            let mut b = pool[rng.random_range(0..pool.len() - 1)];
            if b >= a {
                // skip over `a` so the partner is distinct and uniform
                b = pool[pool.iter().position(|&x| x == b).expect("b drawn from pool") + 1];
            }
            let (ea, eb) = (parent.indices()[a], parent.indices()[b]);
            if ea == 0 || eb + 1 >= space.ladders[b].len() {
                continue;
            }
            let mut plan = parent.clone();
            plan.indices_mut()[a] = ea - 1;
            plan.indices_mut()[b] = eb + 1;
            if space.is_balanced(&plan) {
                return Mutation { plan, changed: true };
            }
        }
    }
    Mutation {
        plan: parent.clone(),
        changed: false,
    }
}
