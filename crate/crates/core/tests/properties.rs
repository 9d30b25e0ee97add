use fishcore::bitstream::{pack_codes, unpack_codes};
use fishcore::dualar::{fast_forward, slow_forward, DualArConfig, DualArWeights, KvCache, Token};
use fishcore::firefly::{downsampled_len, f_down_reference, f_up_reference};
use fishcore::gfsq::{codebook_size, fsq_quantize_dim, gfsq_decode, gfsq_encode, utilization};
use fishcore::{CodeGrid, FrameTensor, GfsqConfig};
use proptest::prelude::*;

fn odd_level() -> impl Strategy<Value = u32> {
    (1u32..=12).prop_map(|k| 2 * k + 1)
}

fn small_level() -> impl Strategy<Value = u32> {
    prop_oneof![Just(3u32), Just(5u32)]
}

fn grid_for(levels: Vec<u32>) -> impl Strategy<Value = CodeGrid> {
    (1usize..=4, 1usize..=3, 0usize..=12, 1usize..=8).prop_flat_map(move |(groups, batch, frames, hop)| {
        let config = GfsqConfig::new(groups, levels.clone(), hop).unwrap();
        let size = codebook_size(&config) as u32;
        proptest::collection::vec(0..size, batch * groups * frames)
            .prop_map(move |idx| CodeGrid::new([batch, groups, frames], idx, config.clone()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encode_decode_idempotent_for_levels_up_to_five(
        grid in proptest::collection::vec(small_level(), 1..=4).prop_flat_map(grid_for)
    ) {
        prop_assume!(grid.frames() > 0);
        let back = gfsq_encode(&gfsq_decode(&grid).unwrap(), grid.config()).unwrap();
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn quantizer_is_odd_symmetric(v in -50.0f64..50.0, l in odd_level()) {
        let (i, q) = fsq_quantize_dim(v, l).unwrap();
        let (j, p) = fsq_quantize_dim(-v, l).unwrap();
        prop_assert_eq!(q, -p);
        prop_assert_eq!(i + j, l - 1);
    }

    #[test]
    fn decoded_values_are_bounded(grid in proptest::collection::vec(odd_level(), 1..=3).prop_flat_map(grid_for)) {
        prop_assume!(grid.frames() > 0);
        let z = gfsq_decode(&grid).unwrap();
        prop_assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn quantization_is_idempotent_on_values(v in -10.0f64..10.0, l in small_level()) {
        let (_, q) = fsq_quantize_dim(v, l).unwrap();
        prop_assert_eq!(fsq_quantize_dim(q, l).unwrap().1, q);
    }

    #[test]
    fn bitstream_round_trips(grid in proptest::collection::vec(odd_level(), 1..=3).prop_flat_map(grid_for)) {
        let hop = grid.config().hop();
        // shortest signal that still needs every frame
        let original = (grid.frames() * hop).saturating_sub(hop - 1);
        let bytes = pack_codes(&grid, original).unwrap();
        let (back, len) = unpack_codes(&bytes).unwrap();
        prop_assert_eq!(len, original);
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn utilization_is_a_fraction(grid in proptest::collection::vec(small_level(), 1..=2).prop_flat_map(grid_for)) {
        prop_assume!(grid.frames() > 0);
        let u = utilization(&grid).unwrap();
        prop_assert_eq!(u.len(), grid.config().groups());
        prop_assert!(u.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn reference_sampling_shapes(len in 1usize..200, hop in 1usize..16, c in 1usize..4) {
        let x = FrameTensor::from_fn([1, c, len], |_, ch, t| (t * 7 + ch) as f64 % 3.0 - 1.0);
        let down = f_down_reference(&x, hop).unwrap();
        prop_assert_eq!(down.len(), downsampled_len(len, hop));
        let up = f_up_reference(&down, hop, len).unwrap();
        prop_assert_eq!(up.shape(), x.shape());
    }
}

fn tiny_model(seed: u64, layers: usize) -> DualArWeights<f32> {
    let config = DualArConfig {
        model_dim: 16,
        slow_layers: layers,
        fast_layers: layers,
        heads: 2,
        ffn_dim: 24,
        text_vocab: 10,
        semantic_vocab: 8,
        bos_token: 6,
        eos_token: 7,
        num_codebooks: 3,
        codebook_vocab: 9,
        max_seq: 16,
        rope_base: 10_000.0,
        norm_eps: 1e-6,
        frame_rate: 21.5,
    };
    DualArWeights::random(config, seed).unwrap()
}

fn tokens_strategy() -> impl Strategy<Value = Vec<Token>> {
    proptest::collection::vec(
        prop_oneof![(0u32..10).prop_map(Token::Text), (0u32..8).prop_map(Token::Semantic)],
        2..=16,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn slow_stack_is_causal(seed in 0u64..1000, tokens in tokens_strategy(), at in 0usize..15, layers in 1usize..=2) {
        let w = tiny_model(seed, layers);
        let t = at % (tokens.len() - 1);
        let mut changed = tokens.clone();
        changed[t + 1] = match changed[t + 1] {
            Token::Text(v) => Token::Text((v + 1) % 10),
            Token::Semantic(v) => Token::Semantic((v + 1) % 8),
        };
        let a = slow_forward(&w, &tokens, None).unwrap();
        let b = slow_forward(&w, &changed, None).unwrap();
        for r in 0..=t {
            prop_assert_eq!(a.logits_row(r), b.logits_row(r));
            prop_assert_eq!(a.hidden_row(r), b.hidden_row(r));
        }
    }

    #[test]
    fn incremental_slow_matches_full(seed in 0u64..1000, tokens in tokens_strategy(), split in 1usize..16) {
        let w = tiny_model(seed, 2);
        let split = split.min(tokens.len());
        let full = slow_forward(&w, &tokens, None).unwrap();
        let mut cache = KvCache::new(&w.config);
        let mut got = slow_forward(&w, &tokens[..split], Some(&mut cache)).unwrap().token_logits;
        for end in split + 1..=tokens.len() {
            got.extend(slow_forward(&w, &tokens[..end], Some(&mut cache)).unwrap().token_logits);
        }
        let diff = full.token_logits.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(diff <= 1e-5, "{}", diff);
    }

    #[test]
    fn incremental_fast_matches_full(seed in 0u64..1000, prefix in proptest::collection::vec(0u32..9, 2)) {
        let w = tiny_model(seed, 2);
        let hidden: Vec<f32> = (0..16).map(|i| ((seed as f32) * 0.1 + i as f32).sin()).collect();
        let mut cache = KvCache::new(&w.config);
        for g in 0..3 {
            let a = fast_forward(&w, &hidden, &prefix[..g], Some(&mut cache)).unwrap();
            let b = fast_forward(&w, &hidden, &prefix[..g], None).unwrap();
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            prop_assert!(diff <= 1e-5);
        }
    }
}

/// With the bounded-tanh quantizer, level counts of 7 or more pull the grid
/// extremes inward on re-encoding, so encode∘decode is only the identity when
/// every level count is 3 or 5.
#[test]
fn wide_levels_do_not_reencode_their_extremes() {
    let config = GfsqConfig::new(1, vec![7], 1).unwrap();
    let grid = CodeGrid::new([1, 1, 1], vec![6], config.clone()).unwrap();
    let value = gfsq_decode(&grid).unwrap();
    assert_eq!(value.data(), &[1.0]);
    assert_eq!(gfsq_encode(&value, &config).unwrap().indices(), &[5]);
}
