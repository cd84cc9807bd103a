//! Closed-form FLOP model for the attention operator.
//!
//! Multiply-adds count as two FLOPs. Per query and per attention layer:
//!
//! | term         | DLA                     | MDA comparator              |
//! |--------------|-------------------------|-----------------------------|
//! | location head| `2 d M T` (steplengths) | `2 d (2 M T)` (2-D offsets) |
//! | weight head  | `2 d M T`               | `2 d M T`                   |
//! | sampling     | `6 M T`                 | `4 M T`                     |
//! | bilinear     | `14 M T (d / M)`        | `14 M T (d / M)`            |
//! | out_proj     | `2 d^2`                 | `2 d^2`                     |
//!
//! DLA sampling is `mid + alpha * delta` with the midpoint and delta shared by
//! the query: 2 multiplies and 2 adds per point plus 2 FLOPs amortized for the
//! midpoint/delta, rounded to 6. Bilinear interpolation is 4 reads and 7
//! multiply-adds per point per channel of the head slice (4 tap weights,
//! 3 accumulations of the taps, 1 attention-weighted accumulation, counted as
//! 7 pairs). Value projection is per pixel, not per query, and is left out of
//! both models.

use crate::dla::DlaConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    pub location_head: u64,
    pub weight_head: u64,
    pub sampling: u64,
    pub bilinear: u64,
    pub out_proj: u64,
    /// Memory reads of the bilinear taps (not FLOPs).
    pub tap_reads: u64,
    pub per_query: u64,
    pub total: u64,
}

fn assemble(location: u64, weight: u64, sampling: u64, config: &DlaConfig, queries: usize) -> FlopBreakdown {
    let d = config.dim as u64;
    let mt = (config.heads * config.total_points()) as u64;
    let dh = config.head_dim() as u64;
    let bilinear = 14 * mt * dh;
    let out_proj = 2 * d * d;
    let per_query = location + weight + sampling + bilinear + out_proj;
    FlopBreakdown {
        location_head: location,
        weight_head: weight,
        sampling,
        bilinear,
        out_proj,
        tap_reads: 4 * mt * dh,
        per_query,
        total: per_query * queries as u64,
    }
}

/// FLOPs of one DLA layer over `num_queries` queries.
pub fn count_flops(config: &DlaConfig, num_queries: usize) -> FlopBreakdown {
    let d = config.dim as u64;
    let mt = (config.heads * config.total_points()) as u64;
    assemble(2 * d * mt, 2 * d * mt, 6 * mt, config, num_queries)
}

/// FLOPs of a multi-scale deformable attention layer with the same heads,
/// points and width: unconstrained 2-D offsets around a reference point.
pub fn count_mda_flops(config: &DlaConfig, num_queries: usize) -> FlopBreakdown {
    let d = config.dim as u64;
    let mt = (config.heads * config.total_points()) as u64;
    assemble(2 * d * 2 * mt, 2 * d * mt, 4 * mt, config, num_queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn smallest_config_by_hand() {
        // alpha 2*2*1 + attn 2*2*1 + sampling 6 + bilinear 14*1*2 + out 2*2*2
        let c = DlaConfig::new(1, vec![1], 2).unwrap();
        let f = count_flops(&c, 1);
        assert_eq!((f.location_head, f.weight_head, f.sampling, f.bilinear, f.out_proj), (4, 4, 6, 28, 8));
        assert_eq!(f.total, 50);
    }

    #[test]
    fn fewer_points_fewer_flops() {
        let a = DlaConfig::new(8, vec![4, 1, 1], 256).unwrap();
        let b = DlaConfig::new(8, vec![4, 4, 4], 256).unwrap();
        assert!(count_flops(&a, 1100).total < count_flops(&b, 1100).total);
    }

    #[test]
    fn linear_in_queries() {
        let c = DlaConfig::new(8, vec![4, 1, 1], 256).unwrap();
        assert_eq!(count_flops(&c, 2200).total, 2 * count_flops(&c, 1100).total);
        assert_eq!(count_flops(&c, 0).total, 0);
    }

    #[test]
    fn line_attention_is_cheaper_than_deformable() {
        let c = DlaConfig::new(8, vec![4, 4, 4], 256).unwrap();
        assert!(count_flops(&c, 500).total < count_mda_flops(&c, 500).total);
    }
}
