use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use ctxrouter::clock::ManualClock;
use ctxrouter::record::Timestamp;
use ctxrouter::runtime::{Runtime, RuntimeOptions};
use ctxrouter::server::router;
use http_body_util::BodyExt;
use tower::ServiceExt;

const CONFIG: &str = r#"
kind: cot.dev/v1/Room
name: BioLab
egress:
  - name: occupancy
    flow: "cut occupancy"
---
kind: cot.dev/v1/Room
name: PhyLab
egress:
  - name: occupancy
    flow: "cut occupancy"
  - name: energy
---
kind: cot.dev/v1/Building
name: BioHall
ingress:
  - name: room_occupancy
    intent: "*/*/Room@occupancy"
egress:
  - name: occupancy
    flow: "cut occupancy"
  - name: energy
---
acl:
  staff: ["*@occupancy", "*@energy"]
  student: ["BioLab@occupancy"]
  BioHall: ["*@occupancy"]
"#;

async fn call(app: &axum::Router, method: &str, uri: &str, role: Option<&str>, body: &str) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(r) = role {
        req = req.header("X-Role", r);
    }
    let resp = app
        .clone()
        .oneshot(req.body(Body::from(body.to_string())).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn q(s: &str) -> String {
    s.replace(' ', "%20").replace('|', "%7C").replace('"', "%22").replace('*', "%2A")
}

#[tokio::test(flavor = "multi_thread")]
async fn http_surface() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(Timestamp::from_secs(1_700_000_000)));
    let rt = Runtime::open(dir.path(), clock, RuntimeOptions::default()).unwrap();
    let app = router(rt.clone());

    let (s, body) = call(&app, "POST", "/apply", None, CONFIG).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body, "{applied:[\"BioLab\",\"PhyLab\",\"BioHall\",\"acl\"],unchanged:[],errors:[]}\n");

    let (s, _) = call(&app, "POST", "/join", None, "{child:\"BioLab\",parent:\"BioHall\"}").await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "POST", "/join", None, r#"{"child":"PhyLab","parent":"BioHall"}"#).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "POST", "/join", None, "{child:\"BioLab\",parent:\"BioHall\"}").await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, body) = call(&app, "POST", "/load?ctx=BioLab", None, "{occupancy:0.5}\n").await;
    assert_eq!(s, StatusCode::OK, "{body}");
    call(&app, "POST", "/load?ctx=PhyLab", None, "{occupancy:1.}\n").await;
    let (s, _) = call(&app, "POST", "/load?ctx=Nope", None, "{occupancy:1.}\n").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/load?ctx=BioLab", None, "{occupancy:").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    rt.quiesce().unwrap();

    let uri = format!("/query?target=BioHall@occupancy&q={}", q("avg(occupancy)"));
    let (s, body) = call(&app, "GET", &uri, Some("staff"), "").await;
    assert_eq!((s, body.as_str()), (StatusCode::OK, "{avg:0.75}\n"));
    let uri = format!("/query?target=BioHall@energy&q={}", q("count()"));
    let (s, _) = call(&app, "GET", &uri, Some("student"), "").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let uri = format!("/query?target=Nope@energy&q={}", q("count()"));
    assert_eq!(call(&app, "GET", &uri, Some("staff"), "").await.0, StatusCode::NOT_FOUND);
    let uri = format!("/query?target=BioHall@occupancy&q={}", q("count("));
    assert_eq!(call(&app, "GET", &uri, Some("staff"), "").await.0, StatusCode::BAD_REQUEST);

    let uri = format!(
        "/query?target={}&q={}",
        q("kind:*/*/Room@occupancy"),
        q("sort occupancy | head | cut occupancy,_ctx")
    );
    let (s, body) = call(&app, "GET", &uri, Some("staff"), "").await;
    assert_eq!((s, body.as_str()), (StatusCode::OK, "{occupancy:0.5,_ctx:\"BioLab\"}\n"));

    let (s, body) = call(&app, "GET", "/watch?target=BioLab@occupancy&limit=1", Some("staff"), "").await;
    assert_eq!(s, StatusCode::OK);
    assert!(body.starts_with("{occupancy:0.5,ts:"), "{body}");
    let (s, _) = call(&app, "GET", "/watch?target=BioHall@energy", Some("student"), "").await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    let (s, body) = call(&app, "GET", "/contexts", None, "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body.lines().count(), 3);
    assert!(body.contains("room_occupancy<-BioLab@occupancy"));

    let (s, _) = call(&app, "POST", "/leave", None, "{child:\"BioLab\",parent:\"BioHall\"}").await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = call(&app, "POST", "/apply", None, "kind: x\nname: Bad\n").await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
}
