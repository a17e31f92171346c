use drn_core::model::{load_checkpoint, save_checkpoint, CheckpointError, Drn, DrnConfig};

fn model() -> Drn<f32> {
    Drn::with_seed(
        DrnConfig {
            scale: 2,
            base_channels: 6,
            groups: 2,
            blocks_per_group: 1,
            rd_units_per_block: 2,
            distill_width: 2,
            ..DrnConfig::default()
        },
        11,
    )
    .unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let m = model();
    save_checkpoint(&m, &a).unwrap();
    let loaded = Drn::<f32>::from_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (cfg, params) = load_checkpoint(&a).unwrap();
    assert_eq!(&cfg, m.config());
    assert!(params
        .iter()
        .zip(m.params().iter())
        .all(|(x, y)| x.value() == y.value()));
}

#[test]
fn damaged_files_fail_with_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck");
    save_checkpoint(&model(), &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let load = |bytes: &[u8]| {
        let p = dir.path().join("bad");
        std::fs::write(&p, bytes).unwrap();
        load_checkpoint(&p).unwrap_err()
    };

    let mut magic = good.clone();
    magic[0] ^= 0xff;
    assert!(matches!(load(&magic), CheckpointError::BadMagic));

    let mut version = good.clone();
    version[8] = version[8].wrapping_add(1);
    assert!(matches!(
        load(&version),
        CheckpointError::UnsupportedVersion { .. }
    ));

    for cut in [10, 12, 20, good.len() / 2, good.len() - 1] {
        assert!(
            matches!(load(&good[..cut]), CheckpointError::Truncated { .. }),
            "cut at {cut}"
        );
    }

    let mut long = good.clone();
    long.push(0);
    assert!(matches!(load(&long), CheckpointError::TrailingBytes(1)));
}
