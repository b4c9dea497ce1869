use gazeseq::models::{init_parameters, GazeModel, ModelConfig, ModelVariant, WindowBatch};
use gazeseq::nn::{Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn miniature() -> ModelConfig {
    ModelConfig {
        input_height: 8,
        input_width: 8,
        stage_channels: [2, 2, 2],
        stage_strides: [1, 2, 2],
        blocks_per_stage: 1,
        pool_size: 2,
        lstm_hidden: 3,
        head_hidden: 4,
        static2_hidden: 5,
        output_scale_deg: 3.0,
    }
}

/// L1 loss against targets far from the outputs, so the loss has no kink
/// nearby.
fn loss(model: &mut GazeModel<f64>, x: &Tensor<f64>, batch: &WindowBatch, target: &[f64]) -> f64 {
    let out = model.forward(x, batch, true).unwrap();
    out.data.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / out.numel() as f64
}

fn perturb(model: &mut GazeModel<f64>, pi: usize, k: usize, delta: f64) {
    let mut idx = 0;
    model.visit_params_mut(&mut |p| {
        if idx == pi {
            p.value[k] += delta;
        }
        idx += 1;
    });
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter, or the first entry above 1e-4.
pub fn check(variant: ModelVariant, n_frames: usize, batch: WindowBatch) -> Result<f64, String> {
    let cfg = miniature();
    let mut model = init_parameters::<f64>(variant, &cfg, 21).unwrap();
    // move batch-norm affine parameters off their defaults
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    model.visit_params_mut(&mut |p| {
        if p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with("bias") {
            p.value.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    });
    let x = Tensor::from_vec(
        &[n_frames, 1, 8, 8],
        (0..n_frames * 64).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    let out = model.forward(&x, &batch, true).unwrap();
    let target: Vec<f64> = out.data.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();

    model.zero_grad();
    let out = model.forward(&x, &batch, true).unwrap();
    let dout: Vec<f64> = out
        .data
        .iter()
        .zip(&target)
        .map(|(p, t)| (p - t).signum() / out.numel() as f64)
        .collect();
    model.backward(&Tensor::from_vec(&out.dims, dout).unwrap()).unwrap();

    let mut analytic = Vec::new();
    model.visit_params(&mut |p| analytic.push((p.name.clone(), p.grad.clone())));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut kinds = std::collections::BTreeSet::new();
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            perturb(&mut model, pi, k, h);
            let up = loss(&mut model, &x, &batch, &target);
            perturb(&mut model, pi, k, -2.0 * h);
            let down = loss(&mut model, &x, &batch, &target);
            perturb(&mut model, pi, k, h);
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > 1e-4 {
                return Err(format!("{name}[{k}]: analytic {a} numeric {numeric} rel {rel}"));
            }
            worst = worst.max(rel);
        }
        let kind = if name.contains("conv") {
            "conv"
        } else if name.contains("bn") {
            "batchnorm"
        } else if name.starts_with("lstm") {
            "lstm"
        } else {
            "fc"
        };
        kinds.insert(kind);
    }
    let expected: &[&str] = if variant.is_temporal() {
        &["batchnorm", "conv", "fc", "lstm"]
    } else {
        &["batchnorm", "conv", "fc"]
    };
    let kinds: Vec<&str> = kinds.into_iter().collect();
    if kinds != expected {
        return Err(format!("parameter kinds {kinds:?}, expected {expected:?}"));
    }
    Ok(worst)
}

