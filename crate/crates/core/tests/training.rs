use poseforge::geometry::CameraIntrinsics;
use poseforge::metrics::pose_errors;
use poseforge::pem::{evaluate, image_frame, predict_pose, train_pem, PemConfig, TrainConfig};
use poseforge::scenegen::{generate_records, CorruptionSpec, SceneConfig, SceneRecord};

fn records(n: u64, seed: u64) -> (Vec<SceneRecord>, CameraIntrinsics) {
    let scene = SceneConfig::default();
    (generate_records(0..n, &scene, seed).unwrap(), scene.camera)
}

#[test]
fn same_seed_gives_identical_weights_for_any_thread_count() {
    let (data, cam) = records(96, 3);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed: 9,
        corruption: Some(CorruptionSpec { sigma_px: 2.0, p_outlier: 0.1 }),
        ..TrainConfig::default()
    };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_pem(&data, Some(&data[..16]), &cam, &cfg, PemConfig::reduced(), |_| {}).unwrap())
    };
    let (a, log_a) = run(1);
    let (b, log_b) = run(3);
    assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(log_a.to_csv(), log_b.to_csv());

    let (c, _) = train_pem(&data, None, &cam, &TrainConfig { seed: 10, ..cfg }, PemConfig::reduced(), |_| {}).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn training_lowers_the_loss() {
    let (data, cam) = records(256, 4);
    let cfg = TrainConfig { epochs: 8, batch_size: 32, seed: 1, ..TrainConfig::default() };
    let (_, log) = train_pem(&data, None, &cam, &cfg, PemConfig::reduced(), |_| {}).unwrap();
    let first = log.epochs.first().unwrap().train_loss;
    let last = log.epochs.last().unwrap().train_loss;
    assert!(last < first, "loss went from {first} to {last}");
    assert_eq!(log.epochs.len(), 8);
    assert!(log.to_csv().starts_with("epoch,lr,train_loss,val_E_R_deg,val_E_T_m,val_S_P_star\n"));
}

#[test]
fn ten_samples_are_overfit() {
    let (data, cam) = records(10, 5);
    let cfg = TrainConfig { epochs: 600, batch_size: 10, seed: 2, ..TrainConfig::default() };
    let (_, log) = train_pem(&data, None, &cam, &cfg, PemConfig::default(), |_| {}).unwrap();
    let last = log.epochs.last().unwrap().train_loss;
    assert!(last < 0.01, "final train loss {last}");
}

#[test]
fn one_record_is_memorized() {
    let (data, cam) = records(1, 6);
    let cfg = TrainConfig { epochs: 400, batch_size: 1, seed: 3, ..TrainConfig::default() };
    let (w, _) = train_pem(&data, None, &cam, &cfg, PemConfig::default(), |_| {}).unwrap();
    let pred = predict_pose(&w, &data[0].keypoints, &image_frame(&cam)).unwrap();
    let e = pose_errors(&pred, &data[0].pose).unwrap();
    assert!(e.e_q.to_degrees() < 1.0 && e.e_t < 0.05, "{e:?}");
    let (errors, report) = evaluate(&w, &data, &cam).unwrap();
    assert_eq!(errors[0], e);
    assert_eq!(report.n, 1);
}
