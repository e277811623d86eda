import json
import socket
import urllib.error
import urllib.request

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from metav.models import init_model, mlp_spec
from metav.protocol import RemoteError, RemoteModel, TransportError, decode_rows, encode_rows, serve
from metav.scenarios import SCENARIOS


class Recording:
    """Wraps a model and records the batch sizes it is asked for."""

    def __init__(self, model):
        self.model = model
        self.d_in, self.d_out, self.task_kind = model.d_in, model.d_out, model.task_kind
        self.batches = []

    def predict(self, x):
        self.batches.append(len(x))
        return self.model.predict(x)


@pytest.fixture(scope="module")
def regressor():
    sc = SCENARIOS["regression"]()
    return init_model(sc.spec(sc.target_arch), 0, "regressor")


@pytest.fixture(scope="module")
def server(regressor):
    rec = Recording(regressor)
    with serve(rec) as handle:
        yield handle, rec


def post(url, payload: bytes):
    req = urllib.request.Request(url + "/predict", data=payload, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_meta_reports_regressor_dims(server):
    handle, _ = server
    with urllib.request.urlopen(handle.url + "/meta", timeout=5) as resp:
        meta = json.loads(resp.read())
    assert (meta["d_in"], meta["d_out"], meta["task_kind"]) == (31, 1, "regressor")


def test_wrong_width_is_400(server):
    handle, _ = server
    code, body = post(handle.url, json.dumps({"inputs": [[0.0] * 30]}).encode())
    assert code == 400 and "width 30" in json.loads(body)["error"]


def test_malformed_bodies_are_400(server):
    handle, _ = server
    for payload in (b"{not json", b'{"rows": []}', json.dumps({"inputs": [["a"] * 31]}).encode()):
        assert post(handle.url, payload)[0] == 400


def test_unknown_path_is_404(server):
    handle, _ = server
    with pytest.raises(urllib.error.HTTPError) as exc:
        urllib.request.urlopen(handle.url + "/nothing", timeout=5)
    assert exc.value.code == 404


def test_identical_requests_identical_bytes(server):
    handle, _ = server
    payload = encode_rows("inputs", np.random.default_rng(0).uniform(-1, 1, (5, 31)))
    a, b = post(handle.url, payload), post(handle.url, payload)
    assert a[0] == 200 and a == b


def test_remote_matches_local_and_splits_batches(server, regressor):
    handle, rec = server
    remote = RemoteModel(handle.url)
    x = np.random.default_rng(1).uniform(-1, 1, (128, 31))
    rec.batches.clear()
    out = remote.predict(x)
    assert rec.batches == [64, 64]
    assert np.array_equal(out, regressor.predict(x))


def test_remote_dim_mismatch(server):
    handle, _ = server
    with pytest.raises(ValueError):
        RemoteModel(handle.url, d_in=8)
    with pytest.raises(ValueError):
        RemoteModel(handle.url).predict(np.zeros((2, 8)))


def test_remote_4xx_is_remote_error(server):
    handle, _ = server
    remote = RemoteModel(handle.url)
    remote.d_in = 30  # lie about the width so the server rejects
    with pytest.raises(RemoteError, match="400"):
        remote.predict(np.zeros((1, 30)))


def test_unreachable_endpoint_names_url():
    url = f"http://127.0.0.1:{free_port()}"
    with pytest.raises(TransportError, match=url.replace(".", r"\.")):
        RemoteModel(url, timeout=0.5, retries=1, backoff=0.01)


@settings(max_examples=30)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_wire_roundtrip_exact(x):
    body = json.loads(encode_rows("inputs", x))
    assert np.array_equal(decode_rows(body, "inputs", x.shape[1]), x)


def test_generator_served(tmp_path):
    gen = init_model(mlp_spec([4, 8, 2], "tanh"), 0, "generator")
    with serve(gen) as handle:
        remote = RemoteModel(handle.url)
        z = np.random.default_rng(2).uniform(-1, 1, (3, 4))
        assert np.array_equal(remote.predict(z), gen.predict(z))
