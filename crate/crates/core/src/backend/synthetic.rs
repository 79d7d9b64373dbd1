//! Seeded synthetic arithmetic corpora for simulation and testing.
//!
//! Questions use the `What is <a> + <b>?` form the scripted mock can solve,
//! so simulated correctness is fully controlled by the mock script.

use crate::dataset::{Dataset, Sample, TaskKind};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic addition corpus of `n` samples for a seed.
pub fn arithmetic_dataset(seed: u64, n: usize) -> Dataset {
    let samples = (1..=n)
        .map(|i| {
            let h1 = splitmix64(seed ^ (i as u64).wrapping_mul(0x517C_C1B7_2722_0A95));
            let h2 = splitmix64(h1);
            let a = 2 + (h1 % 98) as i64;
            let b = 2 + (h2 % 98) as i64;
            Sample {
                id: format!("sim-{seed}:{i}"),
                question: format!("What is {a} + {b}?"),
                gold: (a + b).to_string(),
                task: TaskKind::Arithmetic,
            }
        })
        .collect();
    Dataset {
        name: format!("synthetic-{seed}"),
        task: TaskKind::Arithmetic,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(arithmetic_dataset(4, 50), arithmetic_dataset(4, 50));
        assert_ne!(arithmetic_dataset(4, 50), arithmetic_dataset(5, 50));
    }

    #[test]
    fn golds_match_the_question() {
        let shape = regex::Regex::new(r"What is (\d+) \+ (\d+)\?").unwrap();
        for sample in arithmetic_dataset(1, 100).samples {
            let caps = shape.captures(&sample.question).expect("well-formed question");
            let sum: i64 = caps[1].parse::<i64>().unwrap() + caps[2].parse::<i64>().unwrap();
            assert_eq!(sample.gold, sum.to_string());
        }
    }
}
