use super::behavior::Behavior;
use super::{Provenance, Tier, Transition, TransitionSet};
use crate::envs::{env_reset, env_step, EnvSpec};
use crate::error::{Error, Result};
use crate::seeds::{self, derive_seed, stream};

/// Collects `n_transitions` from the tier's behavior policy with ground-truth rewards.
///
/// Tier composition:
/// * `random`, `medium`, `expert`: one behavior throughout.
/// * `medium_replay`: 40% random, then 40% medium, then 20% noisy expert.
/// * `medium_expert`: first half medium, second half expert.
///
/// Each slice is seeded independently from `seed`, and each episode inside a
/// slice from `(slice seed, episode index)`.
pub fn generate_dataset(
    spec: &EnvSpec,
    tier: Tier,
    n_transitions: usize,
    seed: u64,
) -> Result<TransitionSet> {
    if n_transitions == 0 {
        return Err(Error::invalid("n_transitions must be at least 1"));
    }
    let plan: Vec<(Behavior, usize)> = match tier {
        Tier::Random => vec![(Behavior::Random, n_transitions)],
        Tier::Medium => vec![(Behavior::medium(), n_transitions)],
        Tier::Expert => vec![(Behavior::Expert, n_transitions)],
        Tier::MediumExpert => {
            let half = n_transitions / 2;
            vec![(Behavior::medium(), half), (Behavior::Expert, n_transitions - half)]
        }
        Tier::MediumReplay => {
            let random = (0.4 * n_transitions as f64).round() as usize;
            let medium = (0.4 * n_transitions as f64).round() as usize;
            let noisy = n_transitions - random - medium;
            vec![
                (Behavior::Random, random),
                (Behavior::medium(), medium),
                (Behavior::noisy_expert(), noisy),
            ]
        }
    };

    let mut transitions = Vec::with_capacity(n_transitions);
    let mut descriptors = Vec::new();
    for (slice, (behavior, count)) in plan.iter().enumerate() {
        let slice_seed = derive_seed(seed, stream::DATASET, slice as u64);
        collect(spec, *behavior, *count, slice_seed, &mut transitions)?;
        descriptors.push(format!("{}x{}", behavior.describe(), count));
    }
    debug_assert_eq!(transitions.len(), n_transitions);

    Ok(TransitionSet {
        env_id: spec.env_id.clone(),
        tier,
        transitions,
        provenance: Provenance {
            seed,
            behavior: descriptors.join(" | "),
            ..Provenance::default()
        },
    })
}

fn collect(
    spec: &EnvSpec,
    behavior: Behavior,
    count: usize,
    slice_seed: u64,
    out: &mut Vec<Transition>,
) -> Result<()> {
    let mut remaining = count;
    let mut episode = 0u64;
    while remaining > 0 {
        let mut rng = seeds::rng(derive_seed(slice_seed, stream::BEHAVIOR, episode));
        let mut state = env_reset(spec, derive_seed(slice_seed, stream::EPISODE, episode));
        for t in 0..spec.max_episode_steps {
            if remaining == 0 {
                break;
            }
            let action = behavior.act(spec, &state, &mut rng);
            let step = env_step(spec, &state, &action)?;
            remaining -= 1;
            // A cut by the horizon or by the transition budget is a truncation, not a termination.
            let timeout = !step.done && (t + 1 == spec.max_episode_steps || remaining == 0);
            out.push(Transition {
                state,
                action,
                next_state: step.next_state.clone(),
                reward: Some(step.reward),
                done: step.done,
                timeout,
                imputed: false,
            });
            state = step.next_state;
            if step.done {
                break;
            }
        }
        episode += 1;
    }
    Ok(())
}
