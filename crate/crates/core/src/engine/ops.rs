use serde::{Deserialize, Serialize};

use super::conv::shl32;
use crate::error::{Error, Result};
use crate::fault::{FaultHooks, ReluStep};
use crate::model::{LayerKind, LayerSpec};
use crate::tensor::{dequantize, AccumMode, Accumulator, QuantTensor};

/// In-place ReLU, one hook decision per element.
pub fn relu_inplace<H: FaultHooks + ?Sized>(buffer: &mut [i8], layer: &str, hooks: &mut H) {
    for (i, v) in buffer.iter_mut().enumerate() {
        match hooks.on_relu_element(layer, i, *v) {
            ReluStep::Normal => {
                if *v < 0 {
                    *v = 0;
                }
            }
            ReluStep::SkipReset => {}
            ReluStep::ForceReset => *v = 0,
        }
    }
}

/// 2x2 max pooling with stride 2 over an H, W, C buffer.
pub fn maxpool2x2_into(input: &[i8], shape: [usize; 3], output: &mut [i8]) -> Result<()> {
    let [h, w, c] = shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "<maxpool>",
            format!("odd spatial size {h}x{w}"),
        ));
    }
    if input.len() != h * w * c || output.len() != (h / 2) * (w / 2) * c {
        return Err(Error::shape(
            "<maxpool>",
            format!(
                "buffers of {} / {} values for shape {shape:?}",
                input.len(),
                output.len()
            ),
        ));
    }
    let at = |x: usize, y: usize, ch: usize| input[(x * w + y) * c + ch];
    for ox in 0..h / 2 {
        for oy in 0..w / 2 {
            for ch in 0..c {
                let (x, y) = (2 * ox, 2 * oy);
                let m = at(x, y, ch)
                    .max(at(x, y + 1, ch))
                    .max(at(x + 1, y, ch))
                    .max(at(x + 1, y + 1, ch));
                output[(ox * (w / 2) + oy) * c + ch] = m;
            }
        }
    }
    Ok(())
}

pub fn maxpool2x2(input: &QuantTensor) -> Result<QuantTensor> {
    let &[h, w, c] = input.shape() else {
        return Err(Error::shape(
            "<maxpool>",
            format!("expected H, W, C, got {:?}", input.shape()),
        ));
    };
    let mut out = QuantTensor::zeros(vec![h / 2, w / 2, c], input.dec());
    maxpool2x2_into(input.values(), [h, w, c], out.values_mut())?;
    Ok(out)
}

/// Fully connected layer. Each neuron's bias goes through
/// [`FaultHooks::on_bias_load`] before it is shifted into the accumulator.
pub fn dense<H: FaultHooks + ?Sized>(
    input: &[i8],
    layer: &LayerSpec,
    output: &mut [i8],
    mode: AccumMode,
    hooks: &mut H,
) -> Result<()> {
    if layer.kind != LayerKind::Dense {
        return Err(Error::shape(&layer.name, "not a dense layer"));
    }
    layer.validate()?;
    let (Some(weights), Some(bias)) = (&layer.weights, &layer.bias) else {
        unreachable!("validated dense layer has parameters");
    };
    let (n_in, n_out) = (layer.input_len(), layer.output_len());
    if input.len() != n_in || output.len() != n_out {
        return Err(Error::shape(
            &layer.name,
            format!(
                "buffers of {} / {} values, expected {n_in} / {n_out}",
                input.len(),
                output.len()
            ),
        ));
    }
    let w = weights.values();
    for (j, (out, &b)) in output.iter_mut().zip(bias.values()).enumerate() {
        let loaded = hooks.on_bias_load(&layer.name, j, i32::from(b));
        let mut acc = Accumulator::new(shl32(loaded, layer.bias_left_shift), mode);
        for (i, &x) in input.iter().enumerate() {
            acc.mac(w[i * n_out + j], x);
        }
        acc.value = hooks.on_accumulator(&layer.name, j, acc.value);
        *out = acc.requantize(u32::from(layer.output_right_shift));
    }
    Ok(())
}

/// Buffer contents right after a layer ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub layer: String,
    pub values: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub logits: Vec<i8>,
    /// Softmax of the dequantized logits. Display only.
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<LayerSnapshot>>,
}

/// Label is the lowest index holding the largest raw logit.
pub fn softmax_or_argmax(logits: &[i8], dec: i32) -> Prediction {
    let label = logits
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, i8)>, (i, &v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
        .map_or(0, |(i, _)| i);
    let reals: Vec<f64> = logits.iter().map(|&q| dequantize(q, dec)).collect();
    let max = reals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = reals.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Prediction {
        label,
        logits: logits.to_vec(),
        scores: exps.iter().map(|e| e / total).collect(),
        trace: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{FaultPlan, FaultSpec, NoFaults};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Relu(FaultPlan);
    impl FaultHooks for Relu {
        fn on_relu_element(&mut self, layer: &str, i: usize, v: i8) -> ReluStep {
            self.0.on_relu_element(layer, i, v)
        }
    }

    struct Bias(i32);
    impl FaultHooks for Bias {
        fn on_bias_load(&mut self, _: &str, j: usize, b: i32) -> i32 {
            if j == 0 {
                self.0
            } else {
                b
            }
        }
    }

    #[test]
    fn relu_examples() {
        let mut buf = [-5i8, 3, 0];
        relu_inplace(&mut buf, "r", &mut NoFaults);
        assert_eq!(buf, [0, 3, 0]);

        let mut buf = [-5i8, 3];
        let mut hooks = Relu(FaultPlan::new(FaultSpec::ReluSkipReset {
            layer: "r".into(),
            element: 0,
        }));
        relu_inplace(&mut buf, "r", &mut hooks);
        assert_eq!(buf, [-5, 3]);

        let mut buf = [-5i8, 3];
        let mut hooks = Relu(FaultPlan::new(FaultSpec::ReluForceReset {
            layer: "r".into(),
            element: 1,
        }));
        relu_inplace(&mut buf, "r", &mut hooks);
        assert_eq!(buf, [0, 0]);
    }

    #[test]
    fn maxpool_examples() {
        let t = QuantTensor::new(vec![2, 2, 1], vec![1, 2, 3, 4], 2).unwrap();
        let p = maxpool2x2(&t).unwrap();
        assert_eq!(p.values(), &[4]);
        assert_eq!(p.dec(), 2);

        let t = QuantTensor::new(vec![4, 4, 2], vec![-7; 32], 0).unwrap();
        assert!(maxpool2x2(&t).unwrap().values().iter().all(|&v| v == -7));

        let odd = QuantTensor::zeros(vec![3, 2, 1], 0);
        assert!(maxpool2x2(&odd).is_err());
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<i8> = (0..16).map(|_| rng.gen()).collect();
        let t = QuantTensor::new(vec![4, 4, 1], values.clone(), 0).unwrap();
        let p = maxpool2x2(&t).unwrap();
        for ox in 0..2 {
            for oy in 0..2 {
                let mut window = vec![];
                for dx in 0..2 {
                    for dy in 0..2 {
                        window.push(values[(2 * ox + dx) * 4 + 2 * oy + dy]);
                    }
                }
                assert_eq!(p.values()[ox * 2 + oy], *window.iter().max().unwrap());
            }
        }
    }

    fn dense_layer(weights: Vec<i8>, n_in: usize, bias: Vec<i8>) -> LayerSpec {
        let n_out = bias.len();
        LayerSpec::dense(
            "dense1",
            QuantTensor::new(vec![n_in, n_out], weights, 0).unwrap(),
            QuantTensor::new(vec![n_out], bias, 0).unwrap(),
            0,
            0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn dense_examples() {
        let id = dense_layer(vec![1, 0, 0, 1], 2, vec![0, 0]);
        let mut out = [0i8; 2];
        dense(&[5, -3], &id, &mut out, AccumMode::Saturate, &mut NoFaults).unwrap();
        assert_eq!(out, [5, -3]);

        let zero = dense_layer(vec![0; 4], 2, vec![3, -1]);
        dense(
            &[100, 100],
            &zero,
            &mut out,
            AccumMode::Saturate,
            &mut NoFaults,
        )
        .unwrap();
        assert_eq!(out, [3, -1]);

        for input in [[-128i8, -128], [127, 127], [0, 0]] {
            dense(
                &input,
                &id,
                &mut out,
                AccumMode::Saturate,
                &mut Bias(1 << 29),
            )
            .unwrap();
            assert_eq!(out[0], 127);
        }
        assert!(dense(
            &[1, 2, 3],
            &id,
            &mut out,
            AccumMode::Saturate,
            &mut NoFaults
        )
        .is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let mut l = [0i8; 10];
        l[9] = 5;
        assert_eq!(softmax_or_argmax(&l, 0).label, 9);
        assert_eq!(softmax_or_argmax(&[0; 10], 0).label, 0);
        let mut l = [0i8; 10];
        l[0] = 3;
        l[1] = 3;
        l[2] = 1;
        let p = softmax_or_argmax(&l, 0);
        assert_eq!(p.label, 0);
        assert!((p.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
