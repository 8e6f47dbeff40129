//! Evaluation and aggregation against hand-computed oracles.

use ecg_recon::ingest::{build_manifest, save_canonical, EcgRecord, Split, SplitSpec, Subgroup};
use ecg_recon::leads::LeadSet;
use ecg_recon::metrics::{aggregate, LeadMetrics, R2Variant, RecordMetrics};
use ecg_recon::models::{CheckpointMeta, Model, ModelFamily, ModelSpec, Reconstruct};
use ecg_recon::preprocess::{prepare_record, prepare_split, PreprocessConfig};
use ecg_recon::report::{check_hash, evaluate_records, record_metrics};
use ecg_recon::synthetic::SyntheticEcg;
use ecg_recon::{Error, Result};
use ndarray::Array2;

struct Zero;

impl Reconstruct for Zero {
    fn reconstruct(&self, record: &EcgRecord) -> Result<Array2<f32>> {
        Ok(Array2::zeros((9, record.len())))
    }
}

fn prepared(id: &str, seed: u64) -> EcgRecord {
    let raw = SyntheticEcg::default().record(id, 1300, 500.0, seed);
    prepare_record(&raw, &PreprocessConfig::default()).unwrap()
}

#[test]
fn zero_reconstruction_matches_brute_force_r2() {
    let rec = prepared("r0", 11);
    let m = record_metrics(&Zero, &rec, R2Variant::Conventional).unwrap();
    assert_eq!(m.leads.len(), 9);
    for (&lead, cell) in LeadSet::TARGET_9.iter().zip(&m.leads) {
        let x: Vec<f64> = rec.lead(lead).iter().map(|&v| v as f64).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let ss_res: f64 = x.iter().map(|v| v * v).sum();
        let ss_tot: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cell = cell.expect("synthetic leads vary");
        assert!((cell.r2 - (1.0 - ss_res / ss_tot)).abs() < 1e-9, "{lead}");
        assert_eq!(cell.rx, 0.0);
    }
}

fn cell(r2: f64, rx: f64) -> Option<LeadMetrics> {
    Some(LeadMetrics { r2, rx })
}

#[test]
fn two_record_aggregation_by_hand() {
    let mut a = vec![cell(0.5, 0.8); 9];
    a[0] = cell(0.2, 0.4);
    let mut b = vec![cell(0.9, 1.0); 9];
    b[0] = None;
    let records = vec![
        RecordMetrics { record_id: "a".into(), subgroup: Subgroup::MI, leads: a },
        RecordMetrics { record_id: "b".into(), subgroup: Subgroup::Unknown, leads: b },
    ];
    let agg = aggregate(&records);

    let first = agg.overall.leads[0].unwrap();
    assert_eq!((first.r2, first.rx, first.n_records), (0.2, 0.4, 1));
    let other = agg.overall.leads[1].unwrap();
    assert!((other.r2 - 0.7).abs() < 1e-12 && (other.rx - 0.9).abs() < 1e-12);
    assert_eq!(other.n_records, 2);
    // Avg is the mean of the nine lead means
    let avg = agg.overall.avg.unwrap();
    assert!((avg.r2 - (0.2 + 8.0 * 0.7) / 9.0).abs() < 1e-12);
    assert!((avg.rx - (0.4 + 8.0 * 0.9) / 9.0).abs() < 1e-12);

    // unlabelled records only count overall
    assert_eq!(agg.subgroups.keys().copied().collect::<Vec<_>>(), vec![Subgroup::MI]);
    let mi = &agg.subgroups[&Subgroup::MI];
    assert!((mi.avg.unwrap().r2 - (0.2 + 8.0 * 0.5) / 9.0).abs() < 1e-12);
}

#[test]
fn empty_lead_cell_leaves_avg_undefined() {
    let records = vec![RecordMetrics {
        record_id: "c".into(),
        subgroup: Subgroup::HC,
        leads: {
            let mut v = vec![cell(1.0, 1.0); 9];
            v[4] = None;
            v
        },
    }];
    let agg = aggregate(&records);
    assert!(agg.overall.leads[4].is_none());
    assert!(agg.overall.avg.is_none());
}

#[test]
fn evaluation_is_deterministic() {
    let spec = match ModelSpec::default_for(ModelFamily::Pix2PixGan) {
        ModelSpec::Pix2PixGan { mut generator, discriminator } => {
            generator.widths = vec![8, 16, 16];
            ModelSpec::Pix2PixGan { generator, discriminator }
        }
        _ => unreachable!(),
    };
    let model = Model::new(spec, 9).unwrap();
    let records = vec![prepared("d0", 1), prepared("d1", 2)];
    let a = evaluate_records(&model, &records, R2Variant::Conventional).unwrap();
    let b = evaluate_records(&model, &records, R2Variant::Conventional).unwrap();
    assert_eq!(a, b);
    assert_eq!(aggregate(&a), aggregate(&b));
}

#[test]
fn hash_mismatch_and_empty_split_are_errors() {
    let cfg = PreprocessConfig::default();
    let meta = CheckpointMeta { preprocess_hash: "deadbeef".into(), ..Default::default() };
    assert!(matches!(check_hash(&meta, &cfg), Err(Error::ConfigHashMismatch { .. })));
    let meta = CheckpointMeta { preprocess_hash: cfg.hash(), ..Default::default() };
    assert!(check_hash(&meta, &cfg).is_ok());

    let dir = tempfile::tempdir().unwrap();
    for k in 0..3 {
        let rec = prepared(&format!("e{k}"), k);
        save_canonical(&rec, &dir.path().join(format!("e{k}.ecgr"))).unwrap();
    }
    let mut manifest = build_manifest(dir.path(), &SplitSpec::new(1.0, 0.0, 0.0, 0).unwrap(), None).unwrap();
    assert!(matches!(
        prepare_split(&manifest, dir.path(), Split::Test, &cfg),
        Err(Error::EmptySplit(Split::Test))
    ));
    manifest.preprocess_hash = Some("other".into());
    assert!(matches!(
        prepare_split(&manifest, dir.path(), Split::Train, &cfg),
        Err(Error::ConfigHashMismatch { .. })
    ));
}
