//! Same-padded, stride-1 int8 convolution in two loop structures.
//!
//! Both backends walk the kernels in order and consult
//! [`FaultHooks::on_kernel_loop`] before each one, and once more with
//! `k == K` where the loop condition is evaluated for the last time. A
//! kernel that is skipped or exited leaves its output channel untouched.

use crate::error::{Error, Result};
use crate::fault::{FaultHooks, KernelStep};
use crate::model::{LayerKind, LayerSpec};
use crate::tensor::{AccumMode, Accumulator};

struct ConvGeometry<'a> {
    h: usize,
    w: usize,
    c: usize,
    z: usize,
    k: usize,
    weights: &'a [i8],
    bias: &'a [i8],
}

fn geometry<'a>(layer: &'a LayerSpec, input: &[i8], output: &[i8]) -> Result<ConvGeometry<'a>> {
    if layer.kind != LayerKind::Conv2d {
        return Err(Error::shape(&layer.name, "not a conv layer"));
    }
    layer.validate()?;
    let (Some(weights), Some(bias)) = (&layer.weights, &layer.bias) else {
        unreachable!("validated conv layer has parameters");
    };
    let ws = weights.shape();
    let g = ConvGeometry {
        h: layer.input_shape[0],
        w: layer.input_shape[1],
        c: layer.input_shape[2],
        z: ws[0],
        k: ws[3],
        weights: weights.values(),
        bias: bias.values(),
    };
    if input.len() != g.h * g.w * g.c {
        return Err(Error::shape(
            &layer.name,
            format!(
                "input has {} values, expected {}",
                input.len(),
                g.h * g.w * g.c
            ),
        ));
    }
    if output.len() != g.h * g.w * g.k {
        return Err(Error::shape(
            &layer.name,
            format!(
                "output buffer has {} values, expected {}",
                output.len(),
                g.h * g.w * g.k
            ),
        ));
    }
    Ok(g)
}

/// `value << shift` in a 32-bit register.
#[inline]
pub(crate) fn shl32(value: i32, shift: u8) -> i32 {
    (i64::from(value) << shift) as i32
}

/// Direct seven-deep loop nest: kernels outermost, then output rows and
/// columns, then the Z x Z x C window.
pub fn conv2d_naive<H: FaultHooks + ?Sized>(
    input: &[i8],
    layer: &LayerSpec,
    output: &mut [i8],
    mode: AccumMode,
    hooks: &mut H,
) -> Result<()> {
    let g = geometry(layer, input, output)?;
    let pad = g.z / 2;
    for k in 0..g.k {
        match hooks.on_kernel_loop(&layer.name, k) {
            KernelStep::Exit => return Ok(()),
            KernelStep::SkipOne => continue,
            KernelStep::Continue => {}
        }
        let bias = shl32(i32::from(g.bias[k]), layer.bias_left_shift);
        for x in 0..g.h {
            for y in 0..g.w {
                let mut acc = Accumulator::new(bias, mode);
                for m in 0..g.z {
                    let Some(ix) = (x + m).checked_sub(pad).filter(|&ix| ix < g.h) else {
                        continue;
                    };
                    for n in 0..g.z {
                        let Some(iy) = (y + n).checked_sub(pad).filter(|&iy| iy < g.w) else {
                            continue;
                        };
                        for c in 0..g.c {
                            let theta = g.weights[((m * g.z + n) * g.c + c) * g.k + k];
                            acc.mac(theta, input[(ix * g.w + iy) * g.c + c]);
                        }
                    }
                }
                output[(x * g.w + y) * g.k + k] =
                    acc.requantize(u32::from(layer.output_right_shift));
            }
        }
    }
    hooks.on_kernel_loop(&layer.name, g.k);
    Ok(())
}

/// Builds the patch matrix: one row per output position, `Z * Z * C`
/// columns ordered like the weight rows, zero where the window overhangs.
pub fn im2col(input: &[i8], h: usize, w: usize, c: usize, z: usize) -> Vec<i8> {
    let pad = z / 2;
    let cols = z * z * c;
    let mut matrix = vec![0i8; h * w * cols];
    for x in 0..h {
        for y in 0..w {
            let row = &mut matrix[(x * w + y) * cols..][..cols];
            for m in 0..z {
                let Some(ix) = (x + m).checked_sub(pad).filter(|&ix| ix < h) else {
                    continue;
                };
                for n in 0..z {
                    let Some(iy) = (y + n).checked_sub(pad).filter(|&iy| iy < w) else {
                        continue;
                    };
                    let src = &input[(ix * w + iy) * c..][..c];
                    row[(m * z + n) * c..][..c].copy_from_slice(src);
                }
            }
        }
    }
    matrix
}

/// Convolution as matrix-vector products over the im2col matrix, one output
/// channel per iteration of the kernel loop.
pub fn conv2d_im2col<H: FaultHooks + ?Sized>(
    input: &[i8],
    layer: &LayerSpec,
    output: &mut [i8],
    mode: AccumMode,
    hooks: &mut H,
) -> Result<()> {
    let g = geometry(layer, input, output)?;
    let cols = g.z * g.z * g.c;
    let matrix = im2col(input, g.h, g.w, g.c, g.z);
    for k in 0..g.k {
        match hooks.on_kernel_loop(&layer.name, k) {
            KernelStep::Exit => return Ok(()),
            KernelStep::SkipOne => continue,
            KernelStep::Continue => {}
        }
        let bias = shl32(i32::from(g.bias[k]), layer.bias_left_shift);
        for (pos, row) in matrix.chunks_exact(cols).enumerate() {
            let mut acc = Accumulator::new(bias, mode);
            for (col, &x) in row.iter().enumerate() {
                acc.mac(g.weights[col * g.k + k], x);
            }
            output[pos * g.k + k] = acc.requantize(u32::from(layer.output_right_shift));
        }
    }
    hooks.on_kernel_loop(&layer.name, g.k);
    Ok(())
}
