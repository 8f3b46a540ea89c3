//! Closed-form cost of on-the-fly masking versus a precomputed noise table.
//!
//! On the fly, the TEE loads `W₃` and computes `m W₃` per query. With a
//! precomputed table it stores `K` noise vectors and their effects and
//! combines them instead. Sizes use binary units: 1 MB = 2²⁰ bytes and
//! 1 GB = 2³⁰ bytes.

use serde::Serialize;
use thiserror::Error;

pub const MIB: f64 = (1u64 << 20) as f64;
pub const GIB: f64 = (1u64 << 30) as f64;

/// CPU throughput implied by a 70 ms compute time for one
/// 14336 × 4096 matrix-vector product (2 ops per multiply-add).
pub const CALIBRATED_FLOPS: f64 = 2.0 * 14336.0 * 4096.0 / 0.070;

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum CostError {
    #[error("no precomputed table fits: K0 = {k0_raw:.3}, K1 = {k1_raw:.3}")]
    Infeasible { k0_raw: f64, k1_raw: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HardwareProfile {
    pub name: &'static str,
    /// Bytes per second.
    pub bw_tee: f64,
    /// Operations per second.
    pub flops_cpu: f64,
    /// Bytes.
    pub m_tee: f64,
    /// Seconds of TEE compute allowed per layer.
    pub t_budget: f64,
}

impl HardwareProfile {
    /// Client SGX with a 128 MB enclave. Bandwidth and budget are nominal
    /// placeholders; only the memory size and CPU rate are anchored.
    pub fn sgx_client() -> Self {
        Self {
            name: "sgx-128mb",
            bw_tee: 10.0 * GIB,
            flops_cpu: CALIBRATED_FLOPS,
            m_tee: 128.0 * MIB,
            t_budget: 1e-3,
        }
    }

    /// TrustZone with the smallest common secure DRAM carve-out.
    pub fn trustzone_16mb() -> Self {
        Self {
            name: "trustzone-16mb",
            m_tee: 16.0 * MIB,
            ..Self::sgx_client()
        }
    }

    /// Server TEE with a 512 MB enclave heap.
    pub fn server_512mb() -> Self {
        Self {
            name: "server-512mb",
            m_tee: 512.0 * MIB,
            ..Self::sgx_client()
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.bw_tee, self.flops_cpu, self.m_tee, self.t_budget]
            .iter()
            .all(|&x| x.is_finite() && x > 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelShape {
    pub name: &'static str,
    /// FFN dimension.
    pub d_in: u64,
    /// Hidden dimension.
    pub d_out: u64,
    pub layers: u64,
    /// Bytes per element.
    pub s_dtype: u64,
}

impl ModelShape {
    pub const fn new(name: &'static str, d_in: u64, d_out: u64, layers: u64) -> Self {
        Self {
            name,
            d_in,
            d_out,
            layers,
            s_dtype: 4,
        }
    }
}

pub const LLAMA3_8B: ModelShape = ModelShape::new("LLaMA-3 8B", 14336, 4096, 32);
pub const GEMMA3_27B: ModelShape = ModelShape::new("Gemma 3 27B", 21504, 5376, 62);
pub const LLAMA3_70B: ModelShape = ModelShape::new("LLaMA-3 70B", 28672, 8192, 80);
pub const MISTRAL_LARGE2_123B: ModelShape =
    ModelShape::new("Mistral Large 2 123B", 28672, 12288, 88);
pub const LLAMA31_405B: ModelShape = ModelShape::new("LLaMA-3.1 405B", 53248, 16384, 126);

pub const MODEL_ZOO: [ModelShape; 5] = [
    LLAMA3_8B,
    GEMMA3_27B,
    LLAMA3_70B,
    MISTRAL_LARGE2_123B,
    LLAMA31_405B,
];

/// Seconds per layer to load `W₃` and compute `m W₃`.
pub fn t_fly(shape: &ModelShape, hw: &HardwareProfile) -> f64 {
    (shape.s_dtype as f64 / hw.bw_tee + 2.0 / hw.flops_cpu) * shape.d_in as f64 * shape.d_out as f64
}

/// Seconds per layer to combine `K` precomputed vectors and effects.
pub fn t_pre(shape: &ModelShape, hw: &HardwareProfile, k: u64) -> f64 {
    2.0 * k as f64 * (shape.d_in + shape.d_out) as f64 / hw.flops_cpu
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MemFootprint {
    pub mem_fly: u64,
    pub mem_pre: u64,
    /// `mem_fly / mem_pre`; infinite when `mem_pre` is 0.
    pub ratio: f64,
}

pub fn mem_footprints(shape: &ModelShape, k: u64) -> MemFootprint {
    let mem_fly = shape.d_in * shape.d_out * shape.s_dtype;
    let mem_pre = k * (shape.d_in + shape.d_out) * shape.s_dtype;
    MemFootprint {
        mem_fly,
        mem_pre,
        ratio: mem_fly as f64 / mem_pre as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KBounds {
    pub k0: u64,
    pub k1: u64,
    pub k_max: u64,
    pub k0_raw: f64,
    pub k1_raw: f64,
}

/// Memory bound `K₀` over all layers, latency bound `K₁` per layer, and
/// their minimum.
pub fn k_max(shape: &ModelShape, hw: &HardwareProfile) -> Result<KBounds, CostError> {
    let width = (shape.d_in + shape.d_out) as f64;
    let k0_raw = hw.m_tee / (shape.layers as f64 * width * shape.s_dtype as f64);
    let k1_raw = hw.t_budget * hw.flops_cpu / (2.0 * width);
    if k0_raw < 1.0 || k1_raw < 1.0 {
        return Err(CostError::Infeasible { k0_raw, k1_raw });
    }
    let (k0, k1) = (k0_raw.floor() as u64, k1_raw.floor() as u64);
    Ok(KBounds {
        k0,
        k1,
        k_max: k0.min(k1),
        k0_raw,
        k1_raw,
    })
}

/// `224 MB` below one binary gigabyte, `1.31 GB` above.
pub fn format_size(bytes: u64) -> String {
    let b = bytes as f64;
    if b >= GIB {
        format!("{:.2} GB", b / GIB)
    } else if b >= MIB {
        format!("{:.0} MB", b / MIB)
    } else {
        format!("{:.2} MB", b / MIB)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hw() -> HardwareProfile {
        HardwareProfile::sgx_client()
    }

    #[test]
    fn table_memory_values() {
        let printed = ["224 MB", "441 MB", "896 MB", "1.31 GB", "3.25 GB"];
        for (shape, want) in MODEL_ZOO.iter().zip(printed) {
            assert_eq!(
                format_size(mem_footprints(shape, 10).mem_fly),
                want,
                "{}",
                shape.name
            );
        }
        assert_eq!(mem_footprints(&LLAMA3_8B, 1).mem_fly, 234_881_024);
    }

    #[test]
    fn precomputation_savings() {
        let m = mem_footprints(&LLAMA3_8B, 10);
        assert_eq!(m.mem_pre, 737_280);
        assert!((m.mem_pre as f64 / MIB - 0.70).abs() < 0.01);
        assert!(m.ratio > 300.0);
        assert_eq!(mem_footprints(&LLAMA3_8B, 0).mem_pre, 0);
    }

    #[test]
    fn latency_anchors() {
        let compute_only = HardwareProfile {
            bw_tee: f64::INFINITY,
            ..hw()
        };
        assert!((t_fly(&LLAMA3_8B, &compute_only) - 0.070).abs() < 1e-12);
        let tp = t_pre(&LLAMA3_8B, &hw(), 10);
        assert!((tp - 0.23e-3).abs() / 0.23e-3 < 0.05, "{tp}");
        let ratio = t_fly(&LLAMA3_8B, &compute_only) / tp;
        let algebra = (14336.0 * 4096.0) / (10.0 * (14336.0 + 4096.0));
        assert!((ratio - algebra).abs() < 1e-9);
        assert!((t_pre(&LLAMA3_8B, &hw(), 56) / tp - 5.6).abs() < 1e-12);
        let empty = ModelShape::new("empty", 0, 4096, 1);
        assert_eq!(t_fly(&empty, &hw()), 0.0);
    }

    #[test]
    fn k_bounds() {
        let b = k_max(&LLAMA3_8B, &hw()).unwrap();
        assert_eq!(b.k0, 56);
        assert!((b.k0_raw - 56.89).abs() < 0.01);
        assert_eq!(b.k_max, b.k0.min(b.k1));
        let doubled = HardwareProfile {
            m_tee: 256.0 * MIB,
            ..hw()
        };
        assert!((k_max(&LLAMA3_8B, &doubled).unwrap().k0_raw / b.k0_raw - 2.0).abs() < 1e-12);

        assert_eq!(k_max(&LLAMA31_405B, &hw()).unwrap().k0, 3);
        assert!(matches!(
            k_max(&LLAMA31_405B, &HardwareProfile::trustzone_16mb()),
            Err(CostError::Infeasible { k0_raw, .. }) if k0_raw < 1.0
        ));
    }

    proptest! {
        #[test]
        fn linear_in_each_parameter(
            d_in in 1u64..100_000, d_out in 1u64..100_000, k in 1u64..1000, c in 2u64..5,
        ) {
            let s = ModelShape::new("x", d_in, d_out, 32);
            let h = hw();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs();
            let wide = ModelShape { d_out: d_out * c, ..s };
            prop_assert!(close(t_fly(&wide, &h), c as f64 * t_fly(&s, &h)));
            prop_assert!(close(t_pre(&s, &h, k * c), c as f64 * t_pre(&s, &h, k)));
            let both = ModelShape { d_in: d_in * c, d_out: d_out * c, ..s };
            prop_assert!(close(t_pre(&both, &h, k), c as f64 * t_pre(&s, &h, k)));
            prop_assert_eq!(mem_footprints(&s, k * c).mem_pre, c * mem_footprints(&s, k).mem_pre);
            prop_assert_eq!(mem_footprints(&wide, k).mem_fly, c * mem_footprints(&s, k).mem_fly);
            let more_mem = HardwareProfile { m_tee: h.m_tee * c as f64, ..h };
            let faster = HardwareProfile { flops_cpu: h.flops_cpu * c as f64, ..h };
            let b0 = k0_raw(&s, &h);
            prop_assert!(close(k0_raw(&s, &more_mem), c as f64 * b0));
            prop_assert!(close(k1_raw(&s, &faster), c as f64 * k1_raw(&s, &h)));
        }
    }

    fn k0_raw(s: &ModelShape, h: &HardwareProfile) -> f64 {
        match k_max(s, h) {
            Ok(b) => b.k0_raw,
            Err(CostError::Infeasible { k0_raw, .. }) => k0_raw,
        }
    }

    fn k1_raw(s: &ModelShape, h: &HardwareProfile) -> f64 {
        match k_max(s, h) {
            Ok(b) => b.k1_raw,
            Err(CostError::Infeasible { k1_raw, .. }) => k1_raw,
        }
    }
}
