//! Forward evaluation and exact reverse-mode gradients.
//!
//! Rows of a batch are independent, so both passes work row by row inside
//! fixed-size chunks (see [`crate::par`]) and reduce parameter gradients in
//! chunk order.

use super::params::{LayerParams, NetworkParams, ParamSet};
use super::spec::LayerSpec;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Activations recorded by [`forward_traced`] for a later [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    revision: u64,
    input_shape: Vec<usize>,
    /// Per row, the input of every layer.
    layer_inputs: Vec<Vec<Vec<f64>>>,
    logits: Tensor,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn rows(&self) -> usize {
        self.layer_inputs.len()
    }
}

fn dense_forward(p: &LayerParams, inputs: usize, outputs: usize, x: &[f64]) -> Vec<f64> {
    let w = p.weight.data();
    let b = p.bias.data();
    (0..outputs)
        .map(|o| {
            let row = &w[o * inputs..(o + 1) * inputs];
            b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
        })
        .collect()
}

#[derive(Clone, Copy)]
struct ConvGeom {
    ic: usize,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(layer: &LayerSpec, in_shape: &[usize], out_shape: &[usize]) -> Self {
        let LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } = *layer else {
            unreachable!("conv geometry for non-conv layer");
        };
        ConvGeom {
            ic: in_channels,
            oc: out_channels,
            k: kernel,
            stride,
            pad: padding,
            h: in_shape[1],
            w: in_shape[2],
            ho: out_shape[1],
            wo: out_shape[2],
        }
    }

    /// Input coordinate for output position `o` and kernel offset `kk`, if in bounds.
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

fn conv_forward(p: &LayerParams, g: ConvGeom, x: &[f64]) -> Vec<f64> {
    let w = p.weight.data();
    let b = p.bias.data();
    let mut out = vec![0.0; g.oc * g.ho * g.wo];
    for oc in 0..g.oc {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = b[oc];
                for ic in 0..g.ic {
                    for ky in 0..g.k {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for kx in 0..g.k {
                            let Some(ix) = g.src(ox, kx, g.w) else { continue };
                            acc += w[((oc * g.ic + ic) * g.k + ky) * g.k + kx]
                                * x[(ic * g.h + iy) * g.w + ix];
                        }
                    }
                }
                out[(oc * g.ho + oy) * g.wo + ox] = acc;
            }
        }
    }
    out
}

struct Plan {
    shapes: Vec<Vec<usize>>,
}

impl Plan {
    fn new(params: &NetworkParams) -> Self {
        Plan { shapes: params.spec().shapes().expect("validated spec") }
    }
}

fn forward_row(params: &NetworkParams, plan: &Plan, x: &[f64], keep: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let spec = params.spec();
    let mut cache = Vec::with_capacity(if keep { spec.layers.len() } else { 0 });
    let mut act = x.to_vec();
    for (i, (layer, p)) in spec.layers.iter().zip(&params.params().layers).enumerate() {
        let next = match *layer {
            LayerSpec::Dense { inputs, outputs } => dense_forward(p, inputs, outputs, &act),
            LayerSpec::Conv { .. } => {
                conv_forward(p, ConvGeom::new(layer, &plan.shapes[i], &plan.shapes[i + 1]), &act)
            }
            LayerSpec::Relu => act.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::Flatten => act.clone(),
        };
        if keep {
            cache.push(std::mem::replace(&mut act, next));
        } else {
            act = next;
        }
    }
    (act, cache)
}

fn check_batch(params: &NetworkParams, batch: &Tensor) -> Result<()> {
    let spec = params.spec();
    if batch.shape().len() < 2 || batch.row_shape() != spec.input_shape.as_slice() {
        let mut expected = vec![batch.rows()];
        expected.extend_from_slice(&spec.input_shape);
        return Err(Error::Shape { expected, got: batch.shape().to_vec() });
    }
    Ok(())
}

fn finite_logits(data: Vec<f64>, rows: usize, classes: usize) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("network produced non-finite logits".into()));
    }
    Ok(Tensor::from_parts_unchecked(vec![rows, classes], data))
}

/// Logits `[N, C]` for a batch `[N, input...]`.
pub fn forward(params: &NetworkParams, batch: &Tensor) -> Result<Tensor> {
    check_batch(params, batch)?;
    let plan = Plan::new(params);
    let chunks = par::map_row_chunks(batch.rows(), |s, e| {
        (s..e).flat_map(|i| forward_row(params, &plan, batch.row(i), false).0).collect::<Vec<_>>()
    });
    finite_logits(chunks.concat(), batch.rows(), params.spec().classes)
}

/// Like [`forward`], keeping every layer input for [`backward`].
pub fn forward_traced(params: &NetworkParams, batch: &Tensor) -> Result<ForwardTrace> {
    check_batch(params, batch)?;
    let plan = Plan::new(params);
    let chunks = par::map_row_chunks(batch.rows(), |s, e| {
        (s..e).map(|i| forward_row(params, &plan, batch.row(i), true)).collect::<Vec<_>>()
    });
    let mut logits = Vec::with_capacity(batch.rows() * params.spec().classes);
    let mut layer_inputs = Vec::with_capacity(batch.rows());
    for (out, cache) in chunks.into_iter().flatten() {
        logits.extend(out);
        layer_inputs.push(cache);
    }
    Ok(ForwardTrace {
        revision: params.revision(),
        input_shape: batch.shape().to_vec(),
        layer_inputs,
        logits: finite_logits(logits, batch.rows(), params.spec().classes)?,
    })
}

/// Backpropagate one row. Accumulates into `grads` when given; returns the input gradient.
fn backward_row(
    params: &NetworkParams,
    plan: &Plan,
    cache: &[Vec<f64>],
    upstream: &[f64],
    mut grads: Option<&mut ParamSet>,
) -> Vec<f64> {
    let spec = params.spec();
    let mut g = upstream.to_vec();
    for i in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[i];
        let x = &cache[i];
        let p = &params.params().layers[i];
        g = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let w = p.weight.data();
                if let Some(gs) = grads.as_deref_mut() {
                    let gl = &mut gs.layers[i];
                    let gw = gl.weight.data_mut();
                    for o in 0..outputs {
                        let go = g[o];
                        if go != 0.0 {
                            for (acc, xv) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                                *acc += go * xv;
                            }
                        }
                    }
                    for (acc, go) in gl.bias.data_mut().iter_mut().zip(&g) {
                        *acc += go;
                    }
                }
                let mut gx = vec![0.0; inputs];
                for o in 0..outputs {
                    let go = g[o];
                    if go != 0.0 {
                        for (acc, wv) in gx.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                            *acc += go * wv;
                        }
                    }
                }
                gx
            }
            LayerSpec::Conv { .. } => {
                let geo = ConvGeom::new(layer, &plan.shapes[i], &plan.shapes[i + 1]);
                let w = p.weight.data();
                let mut gx = vec![0.0; geo.ic * geo.h * geo.w];
                let mut gl = grads.as_deref_mut().map(|gs| &mut gs.layers[i]);
                for oc in 0..geo.oc {
                    for oy in 0..geo.ho {
                        for ox in 0..geo.wo {
                            let go = g[(oc * geo.ho + oy) * geo.wo + ox];
                            if go == 0.0 {
                                continue;
                            }
                            if let Some(gl) = gl.as_deref_mut() {
                                gl.bias.data_mut()[oc] += go;
                            }
                            for ic in 0..geo.ic {
                                for ky in 0..geo.k {
                                    let Some(iy) = geo.src(oy, ky, geo.h) else { continue };
                                    for kx in 0..geo.k {
                                        let Some(ix) = geo.src(ox, kx, geo.w) else { continue };
                                        let wi = ((oc * geo.ic + ic) * geo.k + ky) * geo.k + kx;
                                        let xi = (ic * geo.h + iy) * geo.w + ix;
                                        gx[xi] += go * w[wi];
                                        if let Some(gl) = gl.as_deref_mut() {
                                            gl.weight.data_mut()[wi] += go * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::Relu => g.iter().zip(x).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect(),
            LayerSpec::Flatten => g,
        };
    }
    g
}

fn check_trace(params: &NetworkParams, trace: &ForwardTrace, upstream: &Tensor) -> Result<()> {
    if trace.revision != params.revision() {
        return Err(Error::StaleTrace { recorded: trace.revision, current: params.revision() });
    }
    upstream.ensure_shape(trace.logits.shape())
}

/// Gradients of `Σ_rows upstream · logits` with respect to every parameter and
/// every input element.
///
/// `upstream` is `∂loss/∂logits` for the traced batch, so the returned values
/// are the exact gradients of that loss.
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    upstream: &Tensor,
) -> Result<(ParamSet, Tensor)> {
    check_trace(params, trace, upstream)?;
    let plan = Plan::new(params);
    let spec = params.spec();
    let chunks = par::map_row_chunks(trace.rows(), |s, e| {
        let mut grads = ParamSet::zeros_like(spec);
        let mut gx = Vec::with_capacity((e - s) * spec.input_len());
        for i in s..e {
            gx.extend(backward_row(params, &plan, &trace.layer_inputs[i], upstream.row(i), Some(&mut grads)));
        }
        (grads, gx)
    });
    let mut total = ParamSet::zeros_like(spec);
    let mut input_grads = Vec::with_capacity(trace.rows() * spec.input_len());
    for (g, gx) in chunks {
        total.add_assign(&g);
        input_grads.extend(gx);
    }
    Ok((total, Tensor::from_parts_unchecked(trace.input_shape.clone(), input_grads)))
}

/// Input gradients only; skips parameter-gradient accumulation.
pub fn input_gradient(params: &NetworkParams, trace: &ForwardTrace, upstream: &Tensor) -> Result<Tensor> {
    check_trace(params, trace, upstream)?;
    let plan = Plan::new(params);
    let chunks = par::map_row_chunks(trace.rows(), |s, e| {
        (s..e)
            .flat_map(|i| backward_row(params, &plan, &trace.layer_inputs[i], upstream.row(i), None))
            .collect::<Vec<_>>()
    });
    Ok(Tensor::from_parts_unchecked(trace.input_shape.clone(), chunks.concat()))
}
