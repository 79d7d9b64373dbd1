//! Property suites for the selection, partitioning, and budget invariants.

use proptest::prelude::*;

use cotstream_core::dataset::{partition, Dataset, Sample, TaskKind};
use cotstream_core::grading::{Grade, Verdict};
use cotstream_core::prompting::{enforce_budget, render_prompt, Demonstration, Prompt};
use cotstream_core::rationale::{
    classify_depth, count_newlines, estimate_tokens, split_steps, DepthClass, Rationale,
    RationaleOrigin,
};
use cotstream_core::strategies::{
    update_correct_only, update_deep_replace, update_shallow_replace, update_wrong_substitute,
    StrategyConfig, StrategyKind,
};

fn dataset_of(n: usize) -> Dataset {
    Dataset {
        name: "prop".into(),
        task: TaskKind::Arithmetic,
        samples: (0..n)
            .map(|i| Sample {
                id: format!("p:{i}"),
                question: format!("What is {i} + 1?"),
                gold: (i + 1).to_string(),
                task: TaskKind::Arithmetic,
            })
            .collect(),
    }
}

fn demo(id: usize, newlines: usize, correct: bool, filler: usize) -> Demonstration {
    let rationale_text = if newlines == 0 {
        format!("single step {}", "x".repeat(filler))
    } else {
        let mut lines: Vec<String> = (0..newlines).map(|i| format!("line {i}")).collect();
        lines.push(format!("final {}", "x".repeat(filler)));
        lines.join("\n")
    };
    Demonstration {
        sample_id: format!("d:{id}"),
        question: format!("What is {id} + {id}?"),
        rationale: Rationale::new(rationale_text, RationaleOrigin::Scripted),
        answer_text: (2 * id).to_string(),
        verdict: Verdict {
            grade: if correct { Grade::Correct } else { Grade::Incorrect },
            predicted: (2 * id).to_string(),
        },
        batch_of_origin: 1,
    }
}

fn arb_demos(max: usize) -> impl Strategy<Value = Vec<Demonstration>> {
    prop::collection::vec((0usize..8, any::<bool>(), 0usize..40), 0..max).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (newlines, correct, filler))| demo(i, newlines, correct, filler))
            .collect()
    })
}

proptest! {
    #[test]
    fn partition_preserves_order_and_balance(n in 1usize..400, m_raw in 1usize..25) {
        let m = m_raw.min(n);
        let dataset = dataset_of(n);
        let batches = partition(&dataset, m).unwrap();

        let flattened: Vec<Sample> = batches.iter().flat_map(|b| b.samples.clone()).collect();
        prop_assert_eq!(&flattened, &dataset.samples);

        let sizes: Vec<usize> = batches.iter().map(|b| b.samples.len()).collect();
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        prop_assert!(max - min <= 1);

        let indices: Vec<usize> = batches.iter().map(|b| b.index).collect();
        prop_assert_eq!(indices, (1..=m).collect::<Vec<_>>());
    }

    #[test]
    fn newline_count_matches_naive_scan(text in "[a-zA-Z0-9 ,\\n.]{0,300}") {
        let naive = text.chars().filter(|c| *c == '\n').count();
        prop_assert_eq!(count_newlines(&text), naive);
    }

    #[test]
    fn depth_classification_is_monotone(nl_low in 0usize..50, delta in 0usize..50, xi in 1usize..20) {
        let nl_high = nl_low + delta;
        if classify_depth(nl_low, xi) == DepthClass::Deep {
            prop_assert_eq!(classify_depth(nl_high, xi), DepthClass::Deep);
        }
    }

    #[test]
    fn token_estimate_is_subadditive(a in ".{0,200}", b in ".{0,200}") {
        let concat = format!("{a}{b}");
        prop_assert!(estimate_tokens(&concat) <= estimate_tokens(&a) + estimate_tokens(&b) + 1);
    }

    #[test]
    fn split_steps_fragments_are_clean_and_ordered(text in "[a-z ,\\n]{0,200}") {
        let steps = split_steps(&text);
        let mut cursor = 0;
        for step in &steps {
            prop_assert!(!step.is_empty());
            prop_assert!(!step.contains(',') && !step.contains('\n'));
            let found = text[cursor..].find(step.as_str());
            prop_assert!(found.is_some(), "fragment {:?} out of order", step);
            cursor += found.unwrap() + step.len();
        }
        // Re-splitting the joined fragments is a fixed point.
        let rejoined = steps.join(",");
        prop_assert_eq!(split_steps(&rejoined), steps);
    }

    #[test]
    fn budget_enforcement_holds_and_is_idempotent(
        demos in arb_demos(14),
        budget in 30usize..600,
        question in "[a-z ]{0,120}",
    ) {
        let prompt = Prompt { demos, budget_tokens: budget, template: "qa-v1".into() };
        match enforce_budget(prompt, &question) {
            Ok(enforced) => {
                prop_assert!(estimate_tokens(&render_prompt(&enforced, &question)) <= budget);
                let again = enforce_budget(enforced.clone(), &question).unwrap();
                prop_assert_eq!(again, enforced);
            }
            Err(_) => {
                // Refusal is only legal when the bare question template
                // already overflows the budget.
                let bare = Prompt { demos: vec![], budget_tokens: budget, template: "qa-v1".into() };
                prop_assert!(estimate_tokens(&render_prompt(&bare, &question)) > budget);
            }
        }
    }

    #[test]
    fn render_depends_on_demo_order(demos in arb_demos(8)) {
        prop_assume!(demos.len() >= 2);
        let blocks: std::collections::HashSet<String> = demos
            .iter()
            .map(|d| format!("{}|{}|{}", d.question, d.rationale.text, d.answer_text))
            .collect();
        prop_assume!(blocks.len() == demos.len());

        let forward = Prompt { demos: demos.clone(), budget_tokens: 1 << 20, template: "qa-v1".into() };
        let mut reversed_demos = demos;
        reversed_demos.reverse();
        let reversed = Prompt { demos: reversed_demos, budget_tokens: 1 << 20, template: "qa-v1".into() };
        prop_assert_ne!(render_prompt(&forward, "q"), render_prompt(&reversed, "q"));
    }

    #[test]
    fn correct_only_keeps_only_correct(demos in arb_demos(20), cap in 1usize..12) {
        let cfg = StrategyConfig { demo_cap: cap, ..StrategyConfig::new(StrategyKind::CorrectOnly) };
        let prompt = Prompt::new(1 << 20);
        let next = update_correct_only(&prompt, &demos, &cfg).unwrap();
        prop_assert!(next.demos.iter().all(|d| d.verdict.is_correct()));
        prop_assert!(next.demos.len() <= cap);
    }

    #[test]
    fn shallow_and_deep_respect_xi(demos in arb_demos(20), xi in 1usize..8, cap in 1usize..12) {
        let base = StrategyConfig { xi, demo_cap: cap, ..StrategyConfig::new(StrategyKind::ShallowReplace) };
        let prompt = Prompt::new(1 << 20);

        let shallow = update_shallow_replace(&prompt, &demos, &base).unwrap();
        prop_assert!(shallow.demos.iter().all(|d| d.rationale.newline_count < xi));

        let deep = update_deep_replace(&prompt, &demos, &base).unwrap();
        prop_assert!(deep.demos.iter().all(|d| d.rationale.newline_count >= xi));

        // Shallow ordering is ascending; deep is descending.
        let depths: Vec<usize> = shallow.demos.iter().map(|d| d.rationale.newline_count).collect();
        prop_assert!(depths.windows(2).all(|w| w[0] <= w[1]));
        let depths: Vec<usize> = deep.demos.iter().map(|d| d.rationale.newline_count).collect();
        prop_assert!(depths.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wrong_substitute_majority_or_empty(
        wrong_n in 0usize..12,
        correct_n in 0usize..12,
        cap in 1usize..10,
        budget in 40usize..4000,
    ) {
        let wrong: Vec<Demonstration> = (0..wrong_n).map(|i| demo(i, i % 4, false, 8)).collect();
        let correct: Vec<Demonstration> = (100..100 + correct_n).map(|i| demo(i, i % 4, true, 8)).collect();
        let cfg = StrategyConfig { demo_cap: cap, ..StrategyConfig::new(StrategyKind::WrongSubstitute) };
        let prompt = Prompt { demos: vec![], budget_tokens: budget, template: "qa-v1".into() };
        let next = update_wrong_substitute(&prompt, &correct, &wrong, &cfg).unwrap();
        let stats = next.stats();
        prop_assert!(
            stats.n_demos == 0 || stats.wrong_fraction > 0.5,
            "composition violated: {:?}", stats
        );
        prop_assert!(next.demos.len() <= cap);
    }
}
