use std::path::PathBuf;
use std::process::Command;

const SMOKE: &str = r#"
#include <math.h>
#include <stdio.h>
#include "fracdiff.h"

int main(void) {
    double v = 0.0;
    if (fd_mittag_leffler(0.5, 1.0, -1.0, &v) != FD_STATUS_OK) return 1;
    if (fabs(v - 0.42758357615580700) > 1e-13) return 2;
    if (fd_mittag_leffler(-0.5, 1.0, -1.0, &v) != FD_STATUS_INVALID_ARGUMENT) return 3;
    char msg[256];
    if (fd_last_error_message(msg, sizeof msg) == 0) return 4;
    FdConfig *cfg = NULL;
    if (fd_config_load("/nonexistent/c.toml", FD_MODE_FORWARD, &cfg) != FD_STATUS_CONFIG) return 5;
    if (cfg != NULL) return 6;
    printf("ok\n");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler `{cc}`");
        return;
    }
    let lib = target_dir().join("libfracdiff_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, SMOKE).unwrap();
    let exe = dir.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
