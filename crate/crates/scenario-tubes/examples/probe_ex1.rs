use scenario_tubes::plants::{example1_plant, example1_model};
use scenario_tubes::model::{Dataset, ModelEvaluators};
use scenario_tubes::certificates::ConfidenceSchedule;
use scenario_tubes::tube::TubeBuilder;
use scenario_tubes::rng::Stream;

fn main() {
    for seed in 0..12u64 {
        let plant = example1_plant(seed, 1000).unwrap();
        let q = plant.truth_quantile(0, 0.2);
        let mx = plant.truth_values(0).iter().cloned().fold(f64::MIN, f64::max);
        let safe_frac = plant.truth_values(0).iter().filter(|&&v| v >= q).count();
        println!("seed {seed}: q20 {q:.3}, max {mx:.3}, |true-safe| {safe_frac}");
    }
    // timing of full classic at N=1000 with R=101
    let model = example1_model(1000).unwrap();
    let evals = ModelEvaluators::build(&model).unwrap();
    let builder = TubeBuilder::new(&model, &evals);
    let mut data = Dataset::empty(1);
    data.push(530, &[0.5]).unwrap();
    let kappa_t = ConfidenceSchedule::new(1e-3).unwrap().kappa_at(1);
    let t0 = std::time::Instant::now();
    let run = builder.classic(&data, 0.1, kappa_t, 1, Stream::root(7)).unwrap();
    println!("classic m={} s={} [{:?}]", run.tube.certificate.m, run.tube.certificate.s, t0.elapsed());
}
