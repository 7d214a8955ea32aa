mod common;

use common::*;
use eva_core::kernels::vq_matvec;
use eva_core::memsys::{schedule, trace_replicated_vq, AccessBatch, BankRequest, BankedBuffer};
use eva_core::pearith::{align_accumulate, fp16_mul_decomposed, Half};
use eva_core::perfsim::{
    decode_stage_cycles, energy, ArchSpec, EnergyParams, EventCounters, LayerShape,
};
use eva_core::studies::{parse_trace, write_trace_csv, Request, RequestTrace};
use eva_core::vqcore::{decode_layer, encode_layer, train_codebooks_with_report, VqConfig};
use eva_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vq_config() -> impl Strategy<Value = VqConfig> {
    (prop::sample::select(vec![2usize, 4, 8]), 2u32..=6, 1usize..=3, 1usize..=12)
        .prop_map(|(d, n, c, s)| VqConfig::new(d, n, c, s).unwrap())
}

fn normal_half() -> impl Strategy<Value = Half> {
    (any::<bool>(), 1u16..=30, 0u16..1024)
        .prop_map(|(s, e, m)| Half::from_bits(((s as u16) << 15) | (e << 10) | m).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_round_trip(cfg in vq_config(), v in 1usize..6, n in 1usize..20, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_layer(&mut rng, cfg, v * cfg.vector_dim(), n, false);
        let back = decode_layer(&encode_layer(&layer)).unwrap();
        prop_assert_eq!(back.shape(), layer.shape());
        prop_assert_eq!(back.indices(), layer.indices());
        // Codebooks are stored as f32.
        let (a, b) = (layer.dequantize().unwrap(), back.dequantize().unwrap());
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0)));
    }

    #[test]
    fn residual_stages_never_worsen(c in 1usize..=4, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(16, 12, |_, _| rng.random_range(-1.0..1.0));
        let cfg = VqConfig::new(4, 3, c, 6).unwrap();
        let (_, report) = train_codebooks_with_report(&w, &cfg, seed).unwrap();
        prop_assert_eq!(report.stage_mse.len(), c);
        prop_assert!(report.stage_mse.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn training_is_deterministic(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(16, 8, |_, _| rng.random_range(-1.0..1.0));
        let cfg = VqConfig::new(4, 3, 2, 8).unwrap();
        let a = train_codebooks_with_report(&w, &cfg, seed).unwrap();
        let b = train_codebooks_with_report(&w, &cfg, seed).unwrap();
        prop_assert_eq!(encode_layer(&a.0), encode_layer(&b.0));
    }

    #[test]
    fn matvec_matches_oracle(cfg in vq_config(), v in 1usize..5, n in 1usize..16, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = v * cfg.vector_dim();
        let layer = random_layer(&mut rng, cfg, k, n, false);
        let x = random_vector(&mut rng, k, false);
        let got = vq_matvec(&x, &layer).unwrap();
        prop_assert!(max_relative_error(&got, &naive_gemv(&x, &layer.dequantize().unwrap())) <= 1e-9);
    }

    #[test]
    fn matvec_is_linear(cfg in vq_config(), seed: u64, alpha in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3 * cfg.vector_dim();
        let layer = random_layer(&mut rng, cfg, k, 7, false);
        let x1 = random_vector(&mut rng, k, false);
        let x2 = random_vector(&mut rng, k, false);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + b).collect();
        let y1 = vq_matvec(&x1, &layer).unwrap();
        let y2 = vq_matvec(&x2, &layer).unwrap();
        let want: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| alpha * a + b).collect();
        prop_assert!(max_relative_error(&vq_matvec(&mix, &layer).unwrap(), &want) <= 1e-9);
    }

    #[test]
    fn product_commutes_and_follows_sign_rule(a in normal_half(), b in normal_half()) {
        let p = fp16_mul_decomposed(a, b);
        prop_assert_eq!(p, fp16_mul_decomposed(b, a));
        prop_assert_eq!(p.significand < 0, a.is_negative() != b.is_negative());
        prop_assert_eq!(fp16_mul_decomposed(-a, b).significand, -p.significand);
    }

    #[test]
    fn accumulation_ignores_order(xs in prop::collection::vec((normal_half(), normal_half()), 1..12), seed: u64) {
        let products: Vec<_> = xs.iter().map(|&(a, b)| fp16_mul_decomposed(a, b)).collect();
        let mut shuffled = products.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(align_accumulate(&products).unwrap(), align_accumulate(&shuffled).unwrap());
    }

    #[test]
    fn more_banks_never_cost_more(
        addrs in prop::collection::vec(prop::collection::vec(0usize..64, 1..10), 1..20),
        banks in 1usize..8,
        ports in 1usize..3,
    ) {
        let trace = |b: usize| -> Vec<AccessBatch> {
            addrs.iter()
                .map(|batch| AccessBatch::new(batch.iter().map(|&a| BankRequest::fixed(a % b, a / b)).collect()))
                .collect()
        };
        // Banking by address modulo: doubling the banks splits each bank in two.
        let few = schedule(&trace(banks), &BankedBuffer::with_ports(banks, ports, 2).unwrap()).unwrap();
        let many = schedule(&trace(2 * banks), &BankedBuffer::with_ports(2 * banks, ports, 2).unwrap()).unwrap();
        prop_assert!(many.cycles <= few.cycles);
        prop_assert_eq!(few, schedule(&trace(banks), &BankedBuffer::with_ports(banks, ports, 2).unwrap()).unwrap());
    }

    #[test]
    fn replication_budget_is_monotone(seed: u64, budget in 0usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..16 * 32).map(|_| rng.random_range(0..64u16)).collect();
        let idx = eva_core::vqcore::IndexMatrix::new(16, 32, 6, data).unwrap();
        let buffer = BankedBuffer::new(4, 8).unwrap();
        let a = trace_replicated_vq(&idx, 4, &buffer, budget).unwrap();
        let b = trace_replicated_vq(&idx, 4, &buffer, budget + 1).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn energy_is_linear(
        c in (0u64..1 << 20, 0u64..1 << 20, 0u64..1 << 20, 0u64..1 << 20, 0u64..1 << 20, 0u64..1 << 20, 0u64..1 << 20),
        k in 1u64..50,
    ) {
        let ev = EventCounters {
            dram_bytes: c.0, sram_bytes: c.1, int8_macs: c.2, fp16_macs: c.3,
            eu_adds: c.4, cycles: c.5, eu_cycles: c.6,
        };
        let p = EnergyParams::default();
        let one = energy(&ev, &p).total();
        let many = energy(&(ev * k), &p).total();
        prop_assert!((many - k as f64 * one).abs() <= 1e-9 * many.abs().max(1e-30));
        let sum = energy(&(ev + ev), &p).total();
        prop_assert!((sum - 2.0 * one).abs() <= 1e-12 * sum.abs().max(1e-30));
    }

    #[test]
    fn latency_monotone_in_eus_and_batch(k in 1usize..8192, n in 1usize..8192, e in 1usize..16, b in 1usize..64) {
        let cfg = VqConfig::new(8, 8, 2, 4096).unwrap();
        let layer = LayerShape::decode(k, n);
        let arch = ArchSpec::default();
        let lat = |e: usize, b: usize| decode_stage_cycles(&arch.with_eus(e), &cfg, &layer, b).unwrap().latency();
        prop_assert!(lat(e + 1, b) <= lat(e, b));
        prop_assert!(lat(e, b + 1) >= lat(e, b));
    }

    #[test]
    fn trace_csv_round_trip(reqs in prop::collection::vec((1usize..10_000, 1usize..10_000), 1..50)) {
        let trace = RequestTrace::new(reqs.iter().map(|&(i, o)| Request { input_len: i, output_len: o }).collect()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        prop_assert_eq!(parse_trace(buf.as_slice()).unwrap(), trace);
    }
}
