//! Input construction and the contextual self-attention encoder.

use super::params::{BoundParams, DivNetParams, EmbeddingBinding};
use super::{ModelError, RankingInstance};
use crate::tensor::{Graph, Tensor, Var};

/// Sinusoidal position embedding: row `i`, column `j` is
/// `sin(i / 10000^(2⌊j/2⌋/width))` for even `j` and the cosine for odd `j`.
pub fn positional_encoding(num_positions: usize, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(num_positions * width);
    for i in 0..num_positions {
        for j in 0..width {
            let exponent = (2 * (j / 2)) as f64 / width as f64;
            let angle = i as f64 / 10000f64.powf(exponent);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(num_positions, width, data).expect("position embedding shape")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Embedding-table row for a code in a given slot.
pub fn categorical_bucket(code: u64, slot: usize, buckets: usize) -> usize {
    (splitmix64(code ^ (slot as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) % buckets as u64) as usize
}

/// `[I, U repeated] + Z` without categorical features, as a plain matrix.
pub fn input_matrix(inst: &RankingInstance, z: &Tensor) -> Result<Tensor, ModelError> {
    let n = inst.num_items();
    let width = inst.item_dim() + inst.user_dim();
    if z.dims() != (n, width) {
        return Err(ModelError::Dimension(format!(
            "position embedding is {:?}, input rows need {n}x{width}",
            z.shape()
        )));
    }
    let mut data = Vec::with_capacity(n * width);
    for (i, row) in inst.item_features.iter().enumerate() {
        let zr = z.row(i);
        data.extend(
            row.iter()
                .chain(&inst.user_features)
                .zip(zr)
                .map(|(x, p)| x + p),
        );
    }
    Ok(Tensor::matrix(n, width, data)?)
}

/// Records `X = [I, E, U repeated] + Z` on the graph, where `E` holds the
/// looked-up categorical embeddings (if configured). The embedding rows
/// become a gradient-receiving leaf registered on `bound`.
pub fn build_input(
    g: &mut Graph,
    params: &DivNetParams,
    bound: &mut BoundParams,
    inst: &RankingInstance,
    z: &Tensor,
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    let n = inst.num_items();
    if inst.item_dim() != cfg.item_dim || inst.user_dim() != cfg.user_dim {
        return Err(ModelError::Dimension(format!(
            "instance {} has item/user widths {}/{}, model expects {}/{}",
            inst.query_id,
            inst.item_dim(),
            inst.user_dim(),
            cfg.item_dim,
            cfg.user_dim
        )));
    }
    let width = cfg.input_width();
    if z.dims() != (n, width) {
        return Err(ModelError::Dimension(format!(
            "position embedding is {:?}, expected {n}x{width}",
            z.shape()
        )));
    }
    let items = g.constant_matrix(n, cfg.item_dim, inst.item_features.concat());
    let mut x = items;
    if let (Some(cat), Some(table)) = (cfg.categorical, &params.embedding) {
        let codes = inst.categorical_features.as_ref().ok_or_else(|| {
            ModelError::Dimension(format!(
                "instance {} carries no categorical codes but the model expects {}",
                inst.query_id, cat.slots
            ))
        })?;
        let mut buckets = Vec::with_capacity(n * cat.slots);
        for (i, item_codes) in codes.iter().enumerate() {
            if item_codes.len() != cat.slots {
                return Err(ModelError::Dimension(format!(
                    "item {i} of {} has {} codes, expected {}",
                    inst.query_id,
                    item_codes.len(),
                    cat.slots
                )));
            }
            buckets.extend(
                item_codes
                    .iter()
                    .enumerate()
                    .map(|(slot, &c)| categorical_bucket(c, slot, cat.buckets)),
            );
        }
        let data = buckets
            .iter()
            .flat_map(|&b| table.row(b).iter().copied())
            .collect();
        let rows = g.param_matrix(n, cat.slots * cat.width, data);
        bound.embedding = Some(EmbeddingBinding {
            rows,
            buckets,
            width: cat.width,
        });
        x = g.concat_cols(x, rows)?;
    }
    if cfg.user_dim > 0 {
        let user = g.constant_matrix(1, cfg.user_dim, inst.user_features.clone());
        let repeated = g.repeat_rows(user, n)?;
        x = g.concat_cols(x, repeated)?;
    }
    let zv = g.constant(z);
    Ok(g.add(x, zv)?)
}

/// Single-head self-attention blocks:
/// `H = LayerNorm(softmax(Q·Kᵀ/√D_K)·V·W_O + Q)`, each block feeding the next.
pub fn encode(g: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var, ModelError> {
    let scale = 1.0 / (bound.d_k as f64).sqrt();
    let mut h = x;
    for block in &bound.blocks {
        let q = g.matmul(h, block.w_q)?;
        let k = g.matmul(h, block.w_k)?;
        let v = g.matmul(h, block.w_v)?;
        let logits = g.matmul_bt(q, k)?;
        let logits = g.scale(logits, scale);
        let weights = g.softmax_rows(logits)?;
        let attended = g.matmul(weights, v)?;
        let projected = g.matmul(attended, block.w_o)?;
        let residual = g.add(projected, q)?;
        h = g.layer_norm(residual, block.ln_gain, block.ln_bias)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;

    #[test]
    fn position_zero_alternates_zero_one() {
        let z = positional_encoding(1, 6);
        assert_eq!(z.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_one_width_four() {
        let z = positional_encoding(2, 4);
        let expected = [0.841471, 0.540302, 0.0099998, 0.99995];
        for (got, want) in z.row(1).iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn positions_are_distinct() {
        let z = positional_encoding(200, 5);
        for i in 0..200 {
            for j in (i + 1)..200 {
                let diff: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b).abs()).sum();
                assert!(diff > 1e-9, "rows {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn input_is_concat_plus_positions() {
        let inst = RankingInstance::from_grades("q", vec![vec![1.0, 2.0]], vec![3.0], vec![0]);
        let z = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let x = input_matrix(&inst, &z).unwrap();
        for (got, want) in x.data().iter().zip([1.1, 2.2, 3.3]) {
            assert!((got - want).abs() < 1e-12);
        }
        let zero = Tensor::zeros(vec![1, 3]);
        assert_eq!(input_matrix(&inst, &zero).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert!(input_matrix(&inst, &Tensor::zeros(vec![1, 4])).is_err());
    }

    #[test]
    fn user_vector_broadcast_to_every_row() {
        let inst = RankingInstance::from_grades(
            "q",
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![7.0, -1.0],
            vec![0, 0, 0],
        );
        let params = DivNetParams::init(ModelConfig::new(1, 2).with_dims(2, 2), 0).unwrap();
        let mut g = Graph::new();
        let mut bound = params.bind(&mut g);
        let z = Tensor::zeros(vec![3, 3]);
        let x = build_input(&mut g, &params, &mut bound, &inst, &z).unwrap();
        for r in 0..3 {
            assert_eq!(&g.value(x)[r * 3 + 1..r * 3 + 3], &[7.0, -1.0]);
        }
    }

    #[test]
    fn single_item_encoding_skips_mixing() {
        let inst = RankingInstance::from_grades("q", vec![vec![0.3, -0.7]], vec![0.5], vec![0]);
        let params = DivNetParams::init(ModelConfig::new(2, 1).with_dims(3, 4), 4).unwrap();
        let mut g = Graph::new();
        let mut bound = params.bind(&mut g);
        let z = positional_encoding(1, 3);
        let x = build_input(&mut g, &params, &mut bound, &inst, &z).unwrap();
        let h = encode(&mut g, &bound, x).unwrap();

        // layer_norm(V·W_O + Q) by hand
        let b = &params.encoder[0];
        let mut g2 = Graph::new();
        let xv = g2.constant(&g.to_tensor(x));
        let wq = g2.constant(&b.w_q);
        let wv = g2.constant(&b.w_v);
        let wo = g2.constant(&b.w_o);
        let q = g2.matmul(xv, wq).unwrap();
        let v = g2.matmul(xv, wv).unwrap();
        let vo = g2.matmul(v, wo).unwrap();
        let r = g2.add(vo, q).unwrap();
        let gain = g2.constant(&b.ln_gain);
        let bias = g2.constant(&b.ln_bias);
        let expected = g2.layer_norm(r, gain, bias).unwrap();
        assert_eq!(g.value(h), g2.value(expected));
    }
}
