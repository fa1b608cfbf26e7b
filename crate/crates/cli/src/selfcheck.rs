//! Small-game oracle suite run by `pixint selfcheck`.

use pixint_core::game::fixtures::{AdditiveGame, CardinalitySquareGame, MajorityGame, TableGame};
use pixint_core::game::{
    decompose_check, delta_f, multi_order_exact, multi_order_sampled, pairwise_interaction_exact, shapley_exact,
    Coalition, ExhaustiveLimits, FnGame, SetFunction,
};
use pixint_core::image::{builtin_linear_model, builtin_mlp_model, gradient_deviation, ImageShape, ImageTensor};
use pixint_core::numeric::binomial_f64;
use pixint_core::pipeline::OrderGrid;
use pixint_core::rng::derive_seed;

use crate::config::RunConfig;
use crate::models;

type Check = Result<(), String>;

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b}"))
    }
}

fn efficiency(seed: u64) -> Check {
    let limits = ExhaustiveLimits::default();
    for k in 0..20u64 {
        let n = 3 + (k % 10) as usize;
        let g = TableGame::random(n, derive_seed(seed, &[k]));
        let sum: f64 =
            (0..n).map(|i| shapley_exact(&g, i, &limits)).sum::<Result<f64, _>>().map_err(|e| e.to_string())?;
        let full =
            g.evaluate(&Coalition::full(n).unwrap()).unwrap() - g.evaluate(&Coalition::empty(n).unwrap()).unwrap();
        close(sum, full, 1e-9 * full.abs().max(1.0), &format!("game {k} (n = {n})"))?;
    }
    Ok(())
}

fn decomposition(seed: u64) -> Check {
    let limits = ExhaustiveLimits::default();
    for k in 0..8u64 {
        let n = 3 + (k % 6) as usize;
        let g = TableGame::random(n, derive_seed(seed, &[100, k]));
        for i in 0..n {
            for j in i + 1..n {
                let a = pairwise_interaction_exact(&g, i, j, &limits).map_err(|e| e.to_string())?;
                let b = decompose_check(&g, i, j, &limits).map_err(|e| e.to_string())?;
                close(a, b, 1e-9, &format!("game {k} pair ({i}, {j})"))?;
            }
        }
    }
    Ok(())
}

fn constant_game() -> Check {
    let g = FnGame::new(6, |_: &Coalition| 3.5);
    let limits = ExhaustiveLimits::default();
    for s in 0..=4 {
        close(
            multi_order_exact(&g, 0, 5, s, &limits).map_err(|e| e.to_string())?.value,
            0.0,
            0.0,
            &format!("order {s}"),
        )?;
    }
    close(pairwise_interaction_exact(&g, 0, 5, &limits).map_err(|e| e.to_string())?, 0.0, 0.0, "pairwise")
}

fn majority_game() -> Check {
    let g = MajorityGame::new(3);
    let limits = ExhaustiveLimits::default();
    let at = |s| multi_order_exact(&g, 0, 1, s, &limits).map(|e| e.value).map_err(|e| e.to_string());
    close(at(0)?, 1.0, 0.0, "order 0")?;
    close(at(1)?, -1.0, 0.0, "order 1")?;
    close(pairwise_interaction_exact(&g, 0, 1, &limits).map_err(|e| e.to_string())?, 0.0, 1e-12, "pairwise")
}

fn additive_and_square_games() -> Check {
    let limits = ExhaustiveLimits::default();
    let add = AdditiveGame::new(vec![0.3, -1.2, 2.5, 0.7, 1.1]);
    let sq = CardinalitySquareGame::new(7);
    for s in 0..=3 {
        close(multi_order_exact(&add, 1, 3, s, &limits).map_err(|e| e.to_string())?.value, 0.0, 1e-12, "additive")?;
    }
    let ctx = Coalition::from_players(7, [0, 4]).unwrap();
    close(delta_f(&sq, 2, 5, &ctx).map_err(|e| e.to_string())?, 2.0, 0.0, "square game")
}

fn sampled_matches_exact(seed: u64) -> Check {
    let g = TableGame::random(9, seed);
    for s in 0..=7 {
        let exact = multi_order_exact(&g, 2, 6, s, &ExhaustiveLimits::default()).map_err(|e| e.to_string())?;
        let budget = binomial_f64(7, s as u64) as usize;
        let sampled = multi_order_sampled(&g, 2, 6, s, budget, seed).map_err(|e| e.to_string())?;
        close(sampled.value, exact.value, 1e-12, &format!("order {s}"))?;
    }
    Ok(())
}

fn order_grid() -> Check {
    let got = OrderGrid::new(pixint_core::pipeline::DISTRIBUTION_RATIOS.to_vec()).realize(196).distinct;
    let want = vec![0, 10, 20, 39, 59, 78, 98, 118, 137, 157, 176, 186, 194];
    if got == want {
        Ok(())
    } else {
        Err(format!("{got:?}"))
    }
}

fn gradients(seed: u64) -> Check {
    let shape = ImageShape::new(3, 3, 2);
    let x = ImageTensor::new(shape, (0..shape.len()).map(|k| 0.2 + 0.6 * (k as f64 / shape.len() as f64)).collect())
        .map_err(|e| e.to_string())?;
    let linear = builtin_linear_model(4, shape, seed);
    let mlp = builtin_mlp_model(4, shape, 6, seed);
    for (name, dev) in
        [("linear", gradient_deviation(&linear, &x, 1, 1e-4)), ("mlp", gradient_deviation(&mlp, &x, 2, 1e-4))]
    {
        let dev = dev.map_err(|e| e.to_string())?;
        if dev > 1e-5 {
            return Err(format!("{name} gradient off by {dev}"));
        }
    }
    Ok(())
}

fn weights(cfg: &RunConfig) -> Option<Check> {
    let path = cfg.model.weights.as_ref()?;
    let Some(shape) = cfg.input_shape() else {
        return Some(Err("model.input_shape is required to check a weights file".into()));
    };
    Some(models::build(&cfg.model.source, &cfg.model, shape, Some(path)).map(|_| ()).map_err(|e| format!("{e:#}")))
}

/// Prints one line per check and returns the number of failures.
pub fn run(cfg: &RunConfig) -> usize {
    let seed = cfg.seed;
    let mut checks: Vec<(&str, Check)> = vec![
        ("shapley efficiency", efficiency(seed)),
        ("order decomposition", decomposition(seed)),
        ("constant game", constant_game()),
        ("majority game", majority_game()),
        ("additive and square games", additive_and_square_games()),
        ("full-budget sampling", sampled_matches_exact(seed)),
        ("order grid", order_grid()),
        ("builtin gradients", gradients(seed)),
    ];
    if let Some(c) = weights(cfg) {
        checks.push(("model weights", c));
    }
    let mut failed = 0;
    for (name, result) in &checks {
        match result {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    failed
}
