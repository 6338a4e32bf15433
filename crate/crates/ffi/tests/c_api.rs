use std::ffi::{CStr, CString};
use std::ptr;

use brunovsky::canonical::{AutoEncoder, Checkpoint, LossWeights, TrainingMetadata};
use brunovsky::control::{plan_trajectory, pole_placement_real, ClosedLoopController};
use brunovsky::datastore::Normalization;
use brunovsky::nn::Activation;
use brunovsky_ffi::*;

fn checkpoint(n: usize) -> Checkpoint {
    Checkpoint {
        ae: AutoEncoder::new(n, 6, Activation::Tanh, 5, Normalization::identity(n)).unwrap(),
        loss_weights: LossWeights::default(),
        training: TrainingMetadata::default(),
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(brunovsky_last_error()) }.to_string_lossy().into_owned()
}

fn load(ck: &Checkpoint) -> *mut BrunovskyAutoencoder {
    let json = CString::new(ck.to_json().unwrap()).unwrap();
    let mut ae = ptr::null_mut();
    let status = unsafe { brunovsky_autoencoder_from_json(json.as_ptr(), &mut ae) };
    assert_eq!(status, BrunovskyStatus::Ok, "{}", last_error());
    ae
}

#[test]
fn autoencoder_matches_rust_api() {
    let ck = checkpoint(3);
    let ae = load(&ck);
    let x = [0.2, -0.4, 0.9];
    let mut z = [0.0; 3];
    let mut back = [0.0; 3];
    let mut next = [0.0; 3];
    let (mut v, mut u) = (0.0, 0.0);
    unsafe {
        assert_eq!(brunovsky_autoencoder_state_dim(ae), 3);
        assert_eq!(brunovsky_autoencoder_encode_state(ae, x.as_ptr(), 3, z.as_mut_ptr()), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_autoencoder_decode_state(ae, z.as_ptr(), 3, back.as_mut_ptr()), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_autoencoder_encode_input(ae, x.as_ptr(), 3, 0.3, &mut v), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_autoencoder_decode_input(ae, x.as_ptr(), 3, v, &mut u), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_autoencoder_predict_step(ae, x.as_ptr(), 3, 0.3, next.as_mut_ptr()), BrunovskyStatus::Ok);
        brunovsky_autoencoder_free(ae);
    }
    assert_eq!(z.to_vec(), ck.ae.encode_state(&x).unwrap());
    assert_eq!(back.to_vec(), ck.ae.decode_state(&z).unwrap());
    assert_eq!(v, ck.ae.encode_input(&x, 0.3).unwrap());
    assert_eq!(u, ck.ae.decode_input(&x, v).unwrap());
    assert_eq!(next.to_vec(), ck.ae.predict_step(&x, 0.3).unwrap());
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    checkpoint(2).save(&path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut ae = ptr::null_mut();
    unsafe {
        assert_eq!(brunovsky_autoencoder_load(c_path.as_ptr(), &mut ae), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_autoencoder_state_dim(ae), 2);
        brunovsky_autoencoder_free(ae);
    }
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut ae = ptr::null_mut();
    let status = unsafe { brunovsky_autoencoder_load(missing.as_ptr(), &mut ae) };
    assert_eq!(status, BrunovskyStatus::Io);
    assert!(ae.is_null());
    assert!(last_error().contains("nope.json"));
}

#[test]
fn error_codes() {
    let garbage = CString::new("{\"format\": 1}").unwrap();
    let mut ae = ptr::null_mut();
    unsafe {
        assert_eq!(brunovsky_autoencoder_from_json(garbage.as_ptr(), &mut ae), BrunovskyStatus::Parse);
        assert_eq!(brunovsky_autoencoder_from_json(ptr::null(), &mut ae), BrunovskyStatus::NullPointer);
        assert!(last_error().contains("json"));
    }

    let ae = load(&checkpoint(3));
    let x = [0.0; 2];
    let mut z = [0.0; 2];
    unsafe {
        assert_eq!(
            brunovsky_autoencoder_encode_state(ae, x.as_ptr(), 2, z.as_mut_ptr()),
            BrunovskyStatus::Dimension
        );
        assert_eq!(
            brunovsky_autoencoder_encode_state(ae, x.as_ptr(), 3, ptr::null_mut()),
            BrunovskyStatus::NullPointer
        );
        assert_eq!(
            brunovsky_autoencoder_encode_state(ptr::null(), x.as_ptr(), 2, z.as_mut_ptr()),
            BrunovskyStatus::NullPointer
        );
        assert_eq!(brunovsky_autoencoder_state_dim(ptr::null()), 0);
        brunovsky_autoencoder_free(ae);
        brunovsky_autoencoder_free(ptr::null_mut());
    }

    let z0 = [0.0, 0.0];
    let mut plan = ptr::null_mut();
    let status = unsafe { brunovsky_plan_create(z0.as_ptr(), z0.as_ptr(), 2, 1, &mut plan) };
    assert_eq!(status, BrunovskyStatus::InvalidArgument);
    assert!(plan.is_null());

    let bad = CString::new("no-such-preset").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(
        unsafe { brunovsky_system_create(bad.as_ptr(), &mut sys) },
        BrunovskyStatus::InvalidArgument
    );
}

#[test]
fn plan_reference_matches() {
    let z0 = [0.0, 0.1, 0.2];
    let zn = [1.0, 1.0, 1.0];
    let mut plan = ptr::null_mut();
    unsafe {
        assert_eq!(brunovsky_plan_create(z0.as_ptr(), zn.as_ptr(), 3, 15, &mut plan), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_plan_state_dim(plan), 3);
        assert_eq!(brunovsky_plan_horizon(plan), 15);
    }
    let rust = plan_trajectory(&z0, &zn, 15).unwrap();
    for k in [0, 7, 15, 40] {
        let mut z_d = [0.0; 3];
        let mut v_d = 0.0;
        let status = unsafe { brunovsky_plan_reference(plan, k, z_d.as_mut_ptr(), 3, &mut v_d) };
        assert_eq!(status, BrunovskyStatus::Ok);
        assert_eq!((z_d.to_vec(), v_d), rust.reference(k));
    }
    unsafe { brunovsky_plan_free(plan) };
}

#[test]
fn controller_drives_academic_plant_like_rust() {
    let ck = checkpoint(3);
    let ae = load(&ck);
    let z0 = ck.ae.encode_state(&[0.0; 3]).unwrap();
    let zn = ck.ae.encode_state(&[0.3, 0.69, 0.3]).unwrap();
    let mut plan = ptr::null_mut();
    let mut ctrl = ptr::null_mut();
    let mut sys = ptr::null_mut();
    let poles = [0.5, 0.4, 0.3];
    let preset = CString::new("academic").unwrap();
    unsafe {
        assert_eq!(brunovsky_plan_create(z0.as_ptr(), zn.as_ptr(), 3, 20, &mut plan), BrunovskyStatus::Ok);
        assert_eq!(
            brunovsky_controller_create(ae, poles.as_ptr(), ptr::null(), 3, plan, &mut ctrl),
            BrunovskyStatus::Ok,
            "{}",
            last_error()
        );
        // the controller owns copies
        brunovsky_plan_free(plan);
        brunovsky_autoencoder_free(ae);
        assert_eq!(brunovsky_system_create(preset.as_ptr(), &mut sys), BrunovskyStatus::Ok);
        assert_eq!(brunovsky_system_state_dim(sys), 3);
        assert_eq!(brunovsky_system_sampling_time(sys), 1.0);
    }
    let gains = pole_placement_real(&poles).unwrap();
    let mut a = [0.0; 3];
    assert_eq!(unsafe { brunovsky_controller_gains(ctrl, a.as_mut_ptr(), 3) }, BrunovskyStatus::Ok);
    assert_eq!(a.to_vec(), gains.a);

    let rust = ClosedLoopController::new(ck.ae.clone(), gains, plan_trajectory(&z0, &zn, 20).unwrap()).unwrap();
    let mut x = [0.0; 3];
    for k in 0..5 {
        let mut u = 0.0;
        let status = unsafe { brunovsky_controller_step(ctrl, x.as_ptr(), 3, k, &mut u) };
        assert_eq!(status, BrunovskyStatus::Ok, "{}", last_error());
        assert_eq!(u, rust.control_step(&x, k).unwrap().u);
        let mut next = [0.0; 3];
        let status = unsafe { brunovsky_system_step(sys, x.as_ptr(), 3, u.clamp(-1.0, 1.0), next.as_mut_ptr()) };
        assert_eq!(status, BrunovskyStatus::Ok, "{}", last_error());
        x = next;
    }
    unsafe {
        brunovsky_controller_free(ctrl);
        brunovsky_system_free(sys);
    }
}

#[test]
fn academic_singularity_is_numerical() {
    let preset = CString::new("academic").unwrap();
    let mut sys = ptr::null_mut();
    let x = [-2.0, 0.0, 0.0];
    let mut next = [0.0; 3];
    unsafe {
        assert_eq!(brunovsky_system_create(preset.as_ptr(), &mut sys), BrunovskyStatus::Ok);
        assert_eq!(
            brunovsky_system_step(sys, x.as_ptr(), 3, 0.0, next.as_mut_ptr()),
            BrunovskyStatus::Numerical
        );
        brunovsky_system_free(sys);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(brunovsky_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
