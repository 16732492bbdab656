//! `vdp check`: fast numeric verification — analytic gradients against
//! finite differences, moment propagation against weight sampling, and
//! the KL identities.

use vdp_core::gaussian::GaussianTensor;
use vdp_core::layers::VdpLinear;
use vdp_core::network::{MultiHeadNetwork, NetworkMode, Scope};
use vdp_core::objective::kl_scalar;
use vdp_core::prior::PriorSnapshot;
use vdp_core::training::{gradient_check, TrainSample};
use vdp_core::continual::one_hot;
use vdp_core::{SeededRng, Tensor};

fn gradients() -> Result<String, String> {
    let mut rng = SeededRng::new(99);
    let mut worst = 0.0f64;
    for trial in 0..8 {
        let n_in = 3 + rng.next_below(3) as usize;
        let hidden = 4 + rng.next_below(4) as usize;
        let n_classes = 2 + rng.next_below(3) as usize;
        let pi = -2.0 - 3.0 * rng.next_f64();
        let mode = if trial % 2 == 0 { NetworkMode::Variational } else { NetworkMode::Deterministic };
        let mut net = MultiHeadNetwork::mlp(n_in, &[hidden], mode, pi, &mut rng);
        net.attach_head(0, n_classes, pi, &mut rng).map_err(|e| e.to_string())?;
        let samples: Vec<TrainSample> = (0..3)
            .map(|_| TrainSample {
                x: Tensor::from_vec((0..n_in).map(|_| 0.5 * rng.next_normal()).collect()),
                y: one_hot(n_classes, rng.next_below(n_classes as u64) as usize),
                task: 0,
            })
            .collect();
        let batch: Vec<&TrainSample> = samples.iter().collect();
        let scope = Scope::task(0);
        let (tau, prior) = if mode == NetworkMode::Variational {
            (0.1, PriorSnapshot::standard_normal(&net, &scope).map_err(|e| e.to_string())?)
        } else {
            (0.0, PriorSnapshot::empty())
        };
        let err = gradient_check(&net, &batch, tau, &prior, &scope).map_err(|e| e.to_string())?;
        worst = worst.max(err);
        if err >= 1e-4 {
            return Err(format!("trial {trial}: relative error {err:.2e}"));
        }
    }
    Ok(format!("8 nets, worst relative error {worst:.2e}"))
}

fn moment_oracle() -> Result<String, String> {
    let mut rng = SeededRng::new(101);
    for trial in 0..3 {
        let n_in = 2 + rng.next_below(3) as usize;
        let n_out = 2 + rng.next_below(2) as usize;
        let layer = VdpLinear::init(n_in, n_out, 0.0, &mut rng);
        let x = GaussianTensor::new(
            Tensor::from_vec((0..n_in).map(|_| rng.next_normal()).collect()),
            Tensor::from_vec((0..n_in).map(|_| 0.1 + 0.4 * rng.next_f64()).collect()),
        )
        .map_err(|e| e.to_string())?;
        let prop = layer.forward(&x).map_err(|e| e.to_string())?;
        let s = 50_000usize;
        let mut mean = vec![0.0; n_out];
        let mut m2 = vec![0.0; n_out];
        for k in 0..s {
            let xs: Vec<f64> = x
                .mean
                .data()
                .iter()
                .zip(x.variance.data())
                .map(|(&m, &v)| m + v.sqrt() * rng.next_normal())
                .collect();
            let z = layer
                .sampled_forward(&Tensor::from_vec(xs), &mut rng)
                .map_err(|e| e.to_string())?;
            for i in 0..n_out {
                let p = z.data()[i];
                let delta = p - mean[i];
                mean[i] += delta / (k + 1) as f64;
                m2[i] += delta * (p - mean[i]);
            }
        }
        for i in 0..n_out {
            let var = m2[i] / (s - 1) as f64;
            if (mean[i] - prop.mean.data()[i]).abs() >= 4.0 * (var / s as f64).sqrt() {
                return Err(format!("layer {trial} output {i}: mean off by >4 SE"));
            }
            if (var - prop.variance.data()[i]).abs() >= 4.0 * var * (2.0 / (s - 1) as f64).sqrt() {
                return Err(format!("layer {trial} output {i}: variance off by >4 SE"));
            }
        }
    }
    Ok("3 layers within 4 SE at 50k draws".into())
}

fn kl_identities() -> Result<String, String> {
    let mut rng = SeededRng::new(103);
    if kl_scalar(0.7, 1.3, 0.7, 1.3) != 0.0 {
        return Err("KL(q||q) not exactly zero".into());
    }
    for _ in 0..1000 {
        let kl = kl_scalar(
            2.0 * rng.next_normal(),
            0.05 + 3.0 * rng.next_f64(),
            2.0 * rng.next_normal(),
            0.05 + 3.0 * rng.next_f64(),
        );
        if kl < 0.0 {
            return Err(format!("negative KL {kl}"));
        }
    }
    Ok("self-KL zero, 1000 random pairs non-negative".into())
}

pub fn execute() -> Result<(), String> {
    let checks: [(&str, fn() -> Result<String, String>); 3] = [
        ("gradients", gradients),
        ("moment oracle", moment_oracle),
        ("kl identities", kl_identities),
    ];
    let mut failed = false;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("{name}: ok - {detail}"),
            Err(detail) => {
                println!("{name}: FAILED - {detail}");
                failed = true;
            }
        }
    }
    if failed {
        Err("verification failed".into())
    } else {
        Ok(())
    }
}
