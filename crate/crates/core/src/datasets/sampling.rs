use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::domain::{Demonstration, QuestionInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    OnePerLabel,
    Uniform,
}

/// Draws `d` distinct training instances as unannotated demonstrations.
///
/// Under `OnePerLabel` the first `min(d, labels)` picks cover distinct labels
/// and the rest are drawn uniformly from what remains. The returned order is
/// shuffled so labels do not appear in a fixed sequence.
pub fn sample_demonstrations(
    train: &[QuestionInstance],
    labels: &[String],
    d: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<Demonstration>, DatasetError> {
    let golds: Vec<&str> = train.iter().map(|q| q.gold.as_str()).collect();
    let picked = sample_indices(&golds, labels, d, seed, mode)?;
    Ok(picked.into_iter().map(|i| Demonstration::from(train[i].clone())).collect())
}

/// Same selection rule over already-annotated demonstrations.
pub fn sample_demonstration_pool(
    pool: &[Demonstration],
    labels: &[String],
    d: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<Demonstration>, DatasetError> {
    let golds: Vec<&str> = pool.iter().map(|demo| demo.question.gold.as_str()).collect();
    let picked = sample_indices(&golds, labels, d, seed, mode)?;
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

fn sample_indices(
    golds: &[&str],
    labels: &[String],
    d: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<usize>, DatasetError> {
    if d == 0 {
        return Err(DatasetError::ZeroDemos);
    }
    if d > golds.len() {
        return Err(DatasetError::NotEnoughExamples {
            requested: d,
            available: golds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = match mode {
        SamplingMode::Uniform => index::sample(&mut rng, golds.len(), d).into_vec(),
        SamplingMode::OnePerLabel => {
            let by_label: Vec<Vec<usize>> = labels
                .iter()
                .map(|label| {
                    let members: Vec<usize> = (0..golds.len()).filter(|&i| golds[i] == label).collect();
                    if members.is_empty() {
                        Err(DatasetError::LabelWithoutExamples(label.clone()))
                    } else {
                        Ok(members)
                    }
                })
                .collect::<Result<_, _>>()?;
            let mut label_order: Vec<usize> = (0..labels.len()).collect();
            label_order.shuffle(&mut rng);
            let mut picked: Vec<usize> = label_order
                .into_iter()
                .take(d)
                .map(|l| by_label[l][rng.gen_range(0..by_label[l].len())])
                .collect();
            let mut rest: Vec<usize> = (0..golds.len()).filter(|i| !picked.contains(i)).collect();
            while picked.len() < d {
                let k = rng.gen_range(0..rest.len());
                picked.push(rest.swap_remove(k));
            }
            picked
        }
    };
    picked.shuffle(&mut rng);
    Ok(picked)
}
