use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use fewshot_stack::synth::{clustered_stores, SynthSpec};
use fewshot_stack::write_fsf;
use fewshot_stack_ffi::*;

fn fixtures(dir: &Path, dims: &[usize]) -> Vec<CString> {
    let spec = SynthSpec {
        dims: dims.to_vec(),
        n_classes: 3,
        per_class: 8,
        seed: 5,
        ..SynthSpec::default()
    };
    clustered_stores(&spec)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = dir.join(format!("b{i}.fsf"));
            write_fsf(s, &p).unwrap();
            CString::new(p.to_str().unwrap()).unwrap()
        })
        .collect()
}

fn last_error() -> String {
    let p = fss_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_head() -> FssHeadConfig {
    let mut h = FssHeadConfig {
        input_side: 2,
        input_channels: 0,
        conv_filters: 8,
        conv_kernel: 3,
        hidden_sizes: [0; FSS_MAX_HIDDEN],
        n_hidden: 2,
        n_classes: 3,
        l2_lambda: 0.01,
    };
    h.hidden_sizes[0] = 16;
    h.hidden_sizes[1] = 8;
    h
}

fn train_config(epochs: u32) -> FssTrainConfig {
    let mut t = FssTrainConfig {
        learning_rate: 0.0,
        epochs: 0,
        seed: 0,
        precision: 0,
    };
    assert_eq!(unsafe { fss_train_config_default(&mut t) }, FssStatus::Ok);
    t.learning_rate = 1e-2;
    t.epochs = epochs;
    t
}

unsafe fn open_join(paths: &[CString]) -> (Vec<*mut FssStore>, *mut FssDataset) {
    let mut stores = Vec::new();
    for p in paths {
        let mut s = ptr::null_mut();
        assert_eq!(fss_store_open(p.as_ptr(), &mut s), FssStatus::Ok);
        stores.push(s);
    }
    let consts: Vec<*const FssStore> = stores.iter().map(|&s| s as *const _).collect();
    let mut d = ptr::null_mut();
    assert_eq!(fss_dataset_join(consts.as_ptr(), consts.len(), false, &mut d), FssStatus::Ok);
    (stores, d)
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(fss_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn default_head_parameter_count() {
    let mut h = FssHeadConfig {
        input_side: 0,
        input_channels: 0,
        conv_filters: 0,
        conv_kernel: 0,
        hidden_sizes: [0; FSS_MAX_HIDDEN],
        n_hidden: 0,
        n_classes: 0,
        l2_lambda: 0.0,
    };
    assert_eq!(unsafe { fss_head_config_default(&mut h) }, FssStatus::Ok);
    assert_eq!((h.input_side, h.input_channels, h.n_hidden), (4, 376, 3));
    let mut c = FssParamCount::default();
    assert_eq!(unsafe { fss_count_params(&h, &mut c) }, FssStatus::Ok);
    assert_eq!(c.trainable, 2_136_517);
    assert_eq!(c.non_trainable, 1024);

    h.n_hidden = 99;
    assert_eq!(unsafe { fss_count_params(&h, &mut c) }, FssStatus::InvalidArgument);
}

#[test]
fn store_and_join_accessors() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixtures(dir.path(), &[16, 8]);
    unsafe {
        let (stores, d) = open_join(&paths);
        assert_eq!(fss_store_dim(stores[0]), 16);
        assert_eq!(fss_store_dim(stores[1]), 8);
        assert_eq!(fss_store_len(stores[0]), 24);
        assert_eq!(fss_store_n_classes(stores[0]), 3);
        assert_eq!(fss_dataset_dim(d), 24);
        assert_eq!(fss_dataset_len(d), 24);
        fss_dataset_free(d);
        for s in stores {
            fss_store_free(s);
        }
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut s = ptr::null_mut();
        let missing = CString::new(dir.path().join("nope.fsf").to_str().unwrap()).unwrap();
        assert_eq!(fss_store_open(missing.as_ptr(), &mut s), FssStatus::Io);
        assert!(s.is_null());
        assert!(!last_error().is_empty());

        let bad: PathBuf = dir.path().join("bad.fsf");
        std::fs::write(&bad, b"NOPE\x01\x00\x00\x00").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(fss_store_open(bad.as_ptr(), &mut s), FssStatus::Data);
        assert!(last_error().contains("magic"), "{}", last_error());

        assert_eq!(fss_store_open(ptr::null(), &mut s), FssStatus::NullPointer);
        assert_eq!(fss_store_dim(ptr::null()), 0);
        fss_store_free(ptr::null_mut());
    }
}

#[test]
fn indivisible_reshape_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixtures(dir.path(), &[12]);
    unsafe {
        let (stores, d) = open_join(&paths);
        let mut ep = FssEpisodeConfig {
            n_way: 0,
            k_shot: 0,
            q_query: 0,
            pool_per_class: 0,
            seed: 0,
        };
        assert_eq!(fss_episode_config_default(&mut ep), FssStatus::Ok);
        ep.n_way = 3;
        ep.k_shot = 2;
        ep.q_query = 3;
        ep.pool_per_class = 8;
        let mut head = small_head();
        head.input_side = 4;
        let train = train_config(2);
        let mut r = ptr::null_mut();
        assert_eq!(
            fss_cross_validate(d, &ep, &head, &train, 2, 1, &mut r),
            FssStatus::Incompatible
        );
        assert!(r.is_null());
        fss_dataset_free(d);
        stores.into_iter().for_each(|s| fss_store_free(s));
    }
}

#[test]
fn cross_validate_report() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixtures(dir.path(), &[16, 16]);
    unsafe {
        let (stores, d) = open_join(&paths);
        let ep = FssEpisodeConfig {
            n_way: 3,
            k_shot: 2,
            q_query: 4,
            pool_per_class: 8,
            seed: 11,
        };
        let head = small_head();
        let train = train_config(30);
        let mut r = ptr::null_mut();
        assert_eq!(fss_cross_validate(d, &ep, &head, &train, 3, 1, &mut r), FssStatus::Ok);
        assert_eq!(fss_report_episodes(r), 3);
        let accs: Vec<f64> = (0..3).map(|i| fss_report_accuracy(r, i)).collect();
        let mean = accs.iter().sum::<f64>() / 3.0;
        assert!((fss_report_mean(r) - mean).abs() < 1e-12);
        assert!(fss_report_std(r) >= 0.0);
        assert!(fss_report_accuracy(r, 3).is_nan());
        assert_eq!(fss_report_n_classes(r), 3);
        let mut conf = [0u64; 9];
        assert_eq!(fss_report_confusion(r, conf.as_mut_ptr(), 9), FssStatus::Ok);
        assert_eq!(conf.iter().sum::<u64>(), 3 * 3 * 4);
        assert_eq!(fss_report_confusion(r, conf.as_mut_ptr(), 4), FssStatus::InvalidArgument);

        let mut r2 = ptr::null_mut();
        assert_eq!(fss_cross_validate(d, &ep, &head, &train, 3, 2, &mut r2), FssStatus::Ok);
        assert_eq!(fss_report_mean(r2).to_bits(), fss_report_mean(r).to_bits());

        fss_report_free(r);
        fss_report_free(r2);
        fss_dataset_free(d);
        stores.into_iter().for_each(|s| fss_store_free(s));
    }
}

#[test]
fn train_predict_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixtures(dir.path(), &[16]);
    let spec = SynthSpec {
        dims: vec![16],
        n_classes: 3,
        per_class: 8,
        seed: 5,
        ..SynthSpec::default()
    };
    let dataset = fewshot_stack::synth::clustered_dataset(&spec).unwrap();
    unsafe {
        let (stores, d) = open_join(&paths);
        // Two items per class as support.
        let by_class = dataset.indices_by_class();
        let indices: Vec<usize> = by_class.iter().flat_map(|v| v[..2].to_vec()).collect();
        let labels: Vec<u32> = by_class.iter().enumerate().flat_map(|(c, _)| [c as u32; 2]).collect();
        let head_cfg = small_head();
        for precision in [0u32, 1] {
            let train = FssTrainConfig {
                precision,
                ..train_config(60)
            };
            let mut h = ptr::null_mut();
            assert_eq!(
                fss_head_train(d, indices.as_ptr(), labels.as_ptr(), indices.len(), &head_cfg, &train, &mut h),
                FssStatus::Ok,
                "{}",
                last_error()
            );
            assert_eq!(fss_head_n_classes(h), 3);
            assert_eq!(fss_head_input_len(h), 16);

            let feats: Vec<f32> = dataset.items.iter().flat_map(|it| it.features.clone()).collect();
            let n = dataset.items.len();
            let mut pred = vec![0u32; n];
            let mut probs = vec![0f32; n * 3];
            assert_eq!(
                fss_head_predict(h, feats.as_ptr(), n, 16, pred.as_mut_ptr(), probs.as_mut_ptr()),
                FssStatus::Ok
            );
            for row in probs.chunks(3) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-4);
            }
            let correct = pred
                .iter()
                .zip(&dataset.items)
                .filter(|(&p, it)| p == it.key.class_index)
                .count();
            assert!(correct * 10 >= n * 9, "{correct}/{n}");
            assert_eq!(
                fss_head_predict(h, feats.as_ptr(), n, 15, pred.as_mut_ptr(), ptr::null_mut()),
                FssStatus::InvalidArgument
            );

            let path = CString::new(dir.path().join(format!("h{precision}.fsh")).to_str().unwrap()).unwrap();
            assert_eq!(fss_head_save(h, path.as_ptr()), FssStatus::Ok);
            let mut loaded = ptr::null_mut();
            assert_eq!(fss_head_load(path.as_ptr(), &mut loaded), FssStatus::Ok);
            let mut pred2 = vec![0u32; n];
            let mut probs2 = vec![0f32; n * 3];
            assert_eq!(
                fss_head_predict(loaded, feats.as_ptr(), n, 16, pred2.as_mut_ptr(), probs2.as_mut_ptr()),
                FssStatus::Ok
            );
            assert_eq!(pred, pred2);
            assert!(probs.iter().zip(&probs2).all(|(a, b)| a.to_bits() == b.to_bits()));
            fss_head_free(h);
            fss_head_free(loaded);
        }

        let bad_label = [0u32, 7];
        let mut h = ptr::null_mut();
        let train = train_config(1);
        assert_eq!(
            fss_head_train(d, indices.as_ptr(), bad_label.as_ptr(), 2, &head_cfg, &train, &mut h),
            FssStatus::Data
        );
        fss_dataset_free(d);
        stores.into_iter().for_each(|s| fss_store_free(s));
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fewshot_stack.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["fss_store_open", "fss_cross_validate", "fss_head_train", "fss_last_error", "FSS_STATUS_INCOMPATIBLE"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"fewshot_stack.h\"\nint main(void) { FssHeadConfig c; return fss_head_config_default(&c) == FSS_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping C compile check: no C compiler ({e})"),
    }
}
