//! Property tests for the lossless layers: range coding, the stream
//! container, and the factor track.

use proptest::prelude::*;

use corrdiff::bitstream::{parse, AeDescriptor, CorrDiffStream};
use corrdiff::correction::GammaTrack;
use corrdiff::latent::{range_decode, range_encode, ChannelParams, LatentCode};
use corrdiff::schedule::ScheduleKind;

fn channel_params_strategy() -> impl Strategy<Value = ChannelParams> {
    (-1000.0f64..1000.0, 0.02f64..64.0)
        .prop_map(|(m, s)| ChannelParams::from_f64(m, s.max(0.001)).unwrap())
}

fn latent_strategy() -> impl Strategy<Value = LatentCode> {
    // Rank 1 or 2; values span the full symbol range so escapes are hit.
    prop_oneof![
        (1usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(-32768i32..=32767, n),
                channel_params_strategy(),
            )
                .prop_map(move |(values, p)| LatentCode::new(values, vec![n], vec![p]).unwrap())
        }),
        ((1usize..8), (1usize..24)).prop_flat_map(|(c, w)| {
            (
                proptest::collection::vec(-400i32..=400, c * w),
                proptest::collection::vec(channel_params_strategy(), c),
            )
                .prop_map(move |(values, params)| {
                    LatentCode::new(values, vec![c, w], params).unwrap()
                })
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn range_coding_is_lossless(code in latent_strategy()) {
        let bytes = range_encode(&code).unwrap();
        let back = range_decode(&bytes, code.shape(), code.entropy_params()).unwrap();
        prop_assert_eq!(code, back);
    }

    #[test]
    fn gamma_track_wire_round_trip(values in proptest::collection::vec(-4.0f64..4.0, 1..64)) {
        let track = GammaTrack::from_values(&values).unwrap();
        let back = GammaTrack::from_be_bytes(&track.to_be_bytes()).unwrap();
        prop_assert_eq!(&track, &back);
        // Stored values are binary16 fixed points.
        let twice = GammaTrack::from_values(&track.values()).unwrap();
        prop_assert_eq!(&track, &twice);
    }
}

fn stream_strategy() -> impl Strategy<Value = CorrDiffStream> {
    (
        1u16..16,
        any::<u64>(),
        prop_oneof![
            (1usize..64).prop_map(|n| vec![n]),
            ((1usize..16), (1usize..16)).prop_map(|(a, b)| vec![a, b]),
        ],
        proptest::collection::vec(channel_params_strategy(), 1..6),
        proptest::collection::vec(any::<u8>(), 0..64),
        prop_oneof![
            (0.01f32..1.0, 0.001f32..1.0).prop_map(|(k, q)| AeDescriptor::LinearDct { keep_ratio: k, qstep: q }),
            any::<u64>().prop_map(|f| AeDescriptor::TinyMlp { fingerprint: f }),
        ],
    )
        .prop_map(|(t_steps, seed, shape, params, latent, ae)| {
            let gammas = GammaTrack::uniform(1.0, t_steps as usize);
            CorrDiffStream {
                schedule_kind: if seed % 2 == 0 { ScheduleKind::VpCosine } else { ScheduleKind::VpLinearBeta },
                t_steps,
                seed,
                signal_shape: shape,
                autoencoder: ae,
                entropy_params: params,
                coded_latent: latent,
                gammas,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stream_round_trip_is_field_identical(stream in stream_strategy()) {
        let bytes = stream.serialize().unwrap();
        let back = parse(&bytes).unwrap();
        prop_assert_eq!(stream, back);
    }

    #[test]
    fn any_single_byte_flip_is_rejected(stream in stream_strategy(), pos_sel in any::<u64>(), bit in 0u8..8) {
        let bytes = stream.serialize().unwrap();
        let pos = (pos_sel % bytes.len() as u64) as usize;
        let mut corrupted = bytes.clone();
        corrupted[pos] ^= 1 << bit;
        prop_assert!(parse(&corrupted).is_err());
    }

    #[test]
    fn any_truncation_is_rejected(stream in stream_strategy(), cut_sel in any::<u64>()) {
        let bytes = stream.serialize().unwrap();
        let cut = (cut_sel % bytes.len() as u64) as usize;
        prop_assert!(parse(&bytes[..cut]).is_err());
    }
}
