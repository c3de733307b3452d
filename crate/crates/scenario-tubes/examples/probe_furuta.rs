use scenario_tubes::plants::{furuta_rollout, furuta_reward_constraints, FurutaParams};

fn main() {
    let p = FurutaParams::qube_preset();
    println!("k1_range {:?} k2_range {:?} k34 {:?}", p.k1_range, p.k2_range, p.k34);
    println!("nominal at (0.225, 0.40) -> gains {:?}", p.gain_for(&[0.225, 0.40]));
    println!("safety map (rows a1 = 0..1 step 1/15, cols a2):");
    let mut safe_count = 0;
    for i in 0..16 {
        let mut line = String::new();
        for j in 0..16 {
            let a = [i as f64 / 15.0, j as f64 / 15.0];
            let traj = furuta_rollout(&p, &a).unwrap();
            let (h0, h1, h2) = furuta_reward_constraints(&traj);
            let safe = h1 >= 0.0 && h2 >= 0.0;
            if safe { safe_count += 1; }
            line.push(if safe { if h0 > 0.8 { '#' } else { 'o' } } else { '.' });
        }
        println!("{line}");
    }
    println!("safe fraction: {}/256", safe_count);
    let t0 = std::time::Instant::now();
    for _ in 0..100 { let _ = furuta_rollout(&p, &[0.5, 0.5]); }
    println!("rollout time: {:?}/100", t0.elapsed());
    // reward surface values at a few points
    for a in [[0.225, 0.4], [0.0,0.0], [1.0,1.0], [0.5,0.8], [0.1, 0.9]] {
        let traj = furuta_rollout(&p, &a).unwrap();
        let (h0,h1,h2) = furuta_reward_constraints(&traj);
        println!("a={a:?} h0={h0:.4} h1={h1:.4} h2={h2:.4}");
    }
}
