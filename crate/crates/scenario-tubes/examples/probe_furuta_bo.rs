use scenario_tubes::config::{furuta_model, FURUTA_POINTS_PER_AXIS};
use scenario_tubes::certificates::ConfidenceSchedule;
use scenario_tubes::model::NoiseDistribution;
use scenario_tubes::plants::{furuta_plant, FurutaParams, Plant};
use scenario_tubes::safe_bo::{run_safe_bo, SafeBoConfig, Threshold};
use scenario_tubes::tube::{TubeMethodChoice, TubeOptions};
use scenario_tubes::rng::Stream;

fn main() {
    let model = furuta_model(FURUTA_POINTS_PER_AXIS).unwrap();
    let plant = furuta_plant(FurutaParams::qube_preset(), NoiseDistribution::uniform(0.05).unwrap());
    let config = SafeBoConfig {
        thresholds: vec![Threshold { output: 1, min: 0.0 }, Threshold { output: 2, min: 0.0 }],
        initial_safe: vec![model.grid.locate(&[0.225, 0.40]).unwrap()],
        horizon: 20,
        nu: 0.1,
        schedule: ConfidenceSchedule::new(1e-3).unwrap(),
        method: TubeMethodChoice::WaitAndJudge,
        tube_options: TubeOptions::default(),
        keep_tubes: false,
    };
    let mut violation_runs = 0;
    for seed in 0..10u64 {
        let t0 = std::time::Instant::now();
        match run_safe_bo(&model, &plant, &config, Stream::root(seed)) {
            Ok(state) => {
                let viol = state.history.iter().filter(|r| !r.safe).count();
                if viol > 0 { violation_runs += 1; }
                let rec_truth = state.recommendation
                    .and_then(|i| plant.truth(model.grid.point(i)))
                    .map(|v| v[0]);
                let best_m = state.history.iter().map(|r| r.m).max().unwrap_or(0);
                println!("seed {seed}: evals {} viol {viol} |S| {} rec h0 {rec_truth:?} max_m {best_m} [{:?}]",
                    state.history.len(), state.safe_set.len(), t0.elapsed());
            }
            Err(ab) => println!("seed {seed}: ABORT {:?}", ab.source),
        }
    }
    println!("violation runs: {violation_runs}/10");
}
