//! The generated header must compile as C and C++ and link against the
//! static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn compiler(name: &str) -> Option<String> {
    let ok = Command::new(name).arg("--version").output().map(|o| o.status.success()).unwrap_or(false);
    ok.then(|| name.to_string())
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_dir().join("brunovsky.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|l| l.split('(').next())
        .collect();
    assert!(exports.len() > 20);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    for handle in ["BrunovskyAutoencoder", "BrunovskyPlan", "BrunovskyController", "BrunovskySystem"] {
        assert!(header.contains(&format!("typedef struct {handle} {handle};")), "{handle} is not opaque");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    for (cc, ext) in [("cc", "c"), ("c++", "cpp")] {
        let Some(cc) = compiler(cc) else {
            eprintln!("{cc} not available, skipping");
            continue;
        };
        let file = dir.path().join(format!("probe.{ext}"));
        std::fs::write(&file, "#include \"brunovsky.h\"\nint main(void) { return BRUNOVSKY_STATUS_OK; }\n").unwrap();
        let out = Command::new(&cc)
            .arg("-fsyntax-only")
            .arg("-Wall")
            .arg("-Werror")
            .arg("-I")
            .arg(header_dir())
            .arg(&file)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "brunovsky.h"

int main(void) {
    double z0[2] = {0.0, 0.0}, zn[2] = {1.0, 1.0}, zd[2], vd;
    BrunovskyPlan *plan = NULL;
    if (brunovsky_plan_create(z0, zn, 2, 10, &plan) != BRUNOVSKY_STATUS_OK) return 1;
    if (brunovsky_plan_reference(plan, 10, zd, 2, &vd) != BRUNOVSKY_STATUS_OK) return 2;
    if (zd[0] != 1.0 || zd[1] != 1.0) return 3;
    brunovsky_plan_free(plan);
    if (brunovsky_plan_create(z0, zn, 2, 1, &plan) != BRUNOVSKY_STATUS_INVALID_ARGUMENT) return 4;
    if (strlen(brunovsky_last_error()) == 0) return 5;
    printf("ok %s\n", brunovsky_version());
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = compiler("cc") else {
        eprintln!("cc not available, skipping");
        return;
    };
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libbrunovsky_ffi.a");
    assert!(lib.exists(), "{} was not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(&cc)
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}
