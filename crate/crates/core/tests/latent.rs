use motionalign::data::{family_motion, Family, FamilyParams, TARGET_FPS};
use motionalign::embedding::{EmbeddingProvider, SemanticVector, StubProvider};
use motionalign::latent_ops::{
    classify, classify_latent, edit, interpolate, resolve_edit, softmax, text_to_motion,
    EditExpression, EditSource, EditTerm, DEFAULT_TEMPERATURE,
};
use motionalign::model::{LatentCode, ModelConfig, MotionAutoEncoder};
use motionalign::Error;
use proptest::prelude::*;

const D: usize = 16;
const FRAMES: usize = 12;

fn model() -> MotionAutoEncoder {
    MotionAutoEncoder::new(ModelConfig::small(1, D, 2, 16, FRAMES), 31).unwrap()
}

fn latent(phase: f64) -> LatentCode {
    LatentCode::new((0..D).map(|i| (i as f64 * 0.7 + phase).sin()).collect()).unwrap()
}

fn max_step(frames: &[Vec<f64>]) -> f64 {
    frames
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn interpolation_endpoints_equal_direct_decodes() {
    let m = model();
    let (a, b) = (latent(0.0), latent(2.0));
    let path = interpolate(&m, &a, &b, 7, FRAMES).unwrap();
    assert_eq!(path.len(), 7);
    assert_eq!(path[0].0, a);
    assert_eq!(path[6].0, b);
    assert_eq!(path[0].1, m.decode(&a, FRAMES, TARGET_FPS).unwrap());
    assert_eq!(path[6].1, m.decode(&b, FRAMES, TARGET_FPS).unwrap());
    assert!(interpolate(&m, &a, &b, 1, FRAMES).is_err());
}

#[test]
fn denser_interpolation_moves_less_per_step() {
    let m = model();
    let (a, b) = (latent(0.3), latent(-1.9));
    let mut last = f64::INFINITY;
    for n in [3, 9, 33] {
        let feats: Vec<Vec<f64>> = interpolate(&m, &a, &b, n, FRAMES)
            .unwrap()
            .into_iter()
            .map(|(_, s)| s.features())
            .collect();
        let step = max_step(&feats);
        assert!(step < last, "n = {n}: {step} >= {last}");
        last = step;
    }
}

#[test]
fn single_source_edit_with_unit_coefficient_sum_is_identity() {
    let m = model();
    let p = StubProvider::new(D, 5).unwrap();
    let motion = family_motion(Family::Bow, &FamilyParams::NOMINAL, FRAMES, TARGET_FPS).unwrap();
    let z = m.encode(&motion).unwrap();
    let direct = m.decode(&z, FRAMES, TARGET_FPS).unwrap();
    let expr = EditExpression {
        terms: vec![
            EditTerm {
                coef: 2.0,
                source: EditSource::Motion(motion.clone()),
            },
            EditTerm {
                coef: -1.0,
                source: EditSource::Motion(motion.clone()),
            },
        ],
        renormalize: false,
    };
    let (ze, me) = edit(&m, &p, &expr, FRAMES).unwrap();
    for (x, y) in ze.as_slice().iter().zip(z.as_slice()) {
        assert!((x - y).abs() <= 1e-12);
    }
    for (x, y) in me.features().iter().zip(direct.features()) {
        assert!((x - y).abs() <= 1e-9);
    }

    let text = EditExpression {
        terms: vec![
            EditTerm {
                coef: 0.25,
                source: EditSource::Text("jump".into()),
            },
            EditTerm {
                coef: 0.75,
                source: EditSource::Text("jump".into()),
            },
        ],
        renormalize: false,
    };
    let (zt, mt) = edit(&m, &p, &text, FRAMES).unwrap();
    let (zd, md) = text_to_motion(&m, &p, "jump", FRAMES).unwrap();
    for (x, y) in zt.as_slice().iter().zip(zd.as_slice()) {
        assert!((x - y).abs() <= 1e-12);
    }
    for (x, y) in mt.features().iter().zip(md.features()) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn renormalized_edit_is_unit_length() {
    let m = model();
    let p = StubProvider::new(D, 5).unwrap();
    let expr = EditExpression {
        terms: vec![
            EditTerm {
                coef: 1.0,
                source: EditSource::Latent(latent(0.0)),
            },
            EditTerm {
                coef: -1.0,
                source: EditSource::Text("walk".into()),
            },
            EditTerm {
                coef: 1.0,
                source: EditSource::Text("jump".into()),
            },
        ],
        renormalize: true,
    };
    let z = resolve_edit(&m, &p, &expr).unwrap();
    assert!((z.norm() - 1.0).abs() <= 1e-12);
}

#[test]
fn unresolvable_terms_report_their_index() {
    let m = model();
    let p = StubProvider::new(D, 5).unwrap();
    let expr = EditExpression {
        terms: vec![
            EditTerm {
                coef: 1.0,
                source: EditSource::Text("walk".into()),
            },
            EditTerm {
                coef: 1.0,
                source: EditSource::Text("  ".into()),
            },
        ],
        renormalize: false,
    };
    match resolve_edit(&m, &p, &expr).unwrap_err() {
        Error::Resolution { index, .. } => assert_eq!(index, 1),
        other => panic!("unexpected {other:?}"),
    }
    let wrong = EditExpression {
        terms: vec![EditTerm {
            coef: 1.0,
            source: EditSource::Latent(LatentCode::new(vec![1.0; 3]).unwrap()),
        }],
        renormalize: false,
    };
    assert!(matches!(
        resolve_edit(&m, &p, &wrong),
        Err(Error::Resolution { index: 0, .. })
    ));
    let empty = EditExpression {
        terms: vec![],
        renormalize: false,
    };
    assert!(resolve_edit(&m, &p, &empty).is_err());
}

#[test]
fn text_to_motion_checks_dimensions_and_text() {
    let m = model();
    assert!(text_to_motion(&m, &StubProvider::new(D, 1).unwrap(), "", FRAMES).is_err());
    assert!(matches!(
        text_to_motion(&m, &StubProvider::new(D + 1, 1).unwrap(), "walk", FRAMES),
        Err(Error::ConfigMismatch(_))
    ));
    let (_, s) = text_to_motion(&m, &StubProvider::new(D, 1).unwrap(), "walk", 5).unwrap();
    assert_eq!(s.len(), 5);
}

#[test]
fn classify_through_the_encoder() {
    let m = model();
    let p = StubProvider::new(D, 5).unwrap();
    let motion = family_motion(Family::Squat, &FamilyParams::NOMINAL, FRAMES, TARGET_FPS).unwrap();
    let classes: Vec<String> = ["walk", "jump", "squat"].map(String::from).to_vec();
    let s = classify(&m, &p, &motion, &classes, DEFAULT_TEMPERATURE).unwrap();
    assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    let z = m.encode(&motion).unwrap();
    let direct: Vec<f64> = classes
        .iter()
        .map(|c| {
            p.embed_text(c)
                .unwrap()
                .cosine(&SemanticVector::new(z.as_slice().to_vec()).unwrap())
        })
        .collect();
    for (a, b) in s.cosines.iter().zip(&direct) {
        assert!((a - b).abs() <= 1e-12);
    }
    let dup: Vec<String> = ["walk", "walk"].map(String::from).to_vec();
    assert!(classify(&m, &p, &motion, &dup, DEFAULT_TEMPERATURE).is_err());
}

fn unit_vectors(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), n).prop_filter(
        "non-degenerate",
        |vs| {
            vs.iter()
                .all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        },
    )
}

proptest! {
    #[test]
    fn classification_is_a_distribution_and_scale_free(
        z in prop::collection::vec(-1.0f64..1.0, 6),
        embs in unit_vectors(5),
        scale in 1e-3f64..1e3,
    ) {
        prop_assume!(z.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let classes: Vec<String> = (0..5).map(|i| format!("class {i}")).collect();
        let embs: Vec<SemanticVector> = embs.into_iter().map(|v| SemanticVector::new(v).unwrap()).collect();
        let zc = LatentCode::new(z.clone()).unwrap();
        let zs = LatentCode::new(z.iter().map(|x| x * scale).collect()).unwrap();
        let a = classify_latent(&zc, &classes, &embs, DEFAULT_TEMPERATURE).unwrap();
        let b = classify_latent(&zs, &classes, &embs, DEFAULT_TEMPERATURE).unwrap();
        prop_assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(a.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(a.ranking()[0], b.ranking()[0]);
    }

    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-500.0f64..500.0, 1..20)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}
