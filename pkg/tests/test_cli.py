import hashlib
import struct

import numpy as np
import pytest

from tsa.cli import filter_grid, main
from tsa.data import (
    LabeledImages,
    PairBatch,
    TSAModel,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    write_idx,
)
from tsa.dft import dft_basis
from tsa.toral import ToralBasis, orthogonalize


def _read_pgm(path):
    raw = path.read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    w, h = map(int, dims.split())
    assert magic == b"P5" and maxval == b"255"
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


@pytest.fixture
def mnist_fixture(tmp_path):
    rng = np.random.default_rng(0)
    imgs = (rng.uniform(size=(12, 28, 28)) * 255).astype(np.uint8)
    labels = np.arange(12) % 3
    write_idx(tmp_path / "img.idx", imgs)
    write_idx(tmp_path / "lab.idx", labels)
    return tmp_path / "img.idx", tmp_path / "lab.idx"


def test_make_data_patches(tmp_path, capsys):
    out = tmp_path / "p.tsad"
    assert main(["make-data", "--kind", "patches", "--n", "1000", "--side", "8", "--out", str(out)]) == 0
    p = load_dataset(out)
    assert isinstance(p, PairBatch) and len(p) == 1000 and p.D == 64


def test_make_data_mnist(tmp_path, mnist_fixture):
    img, lab = mnist_fixture
    out = tmp_path / "m.tsad"
    assert main(["make-data", "--kind", "mnist-rot", "--mnist-images", str(img),
                 "--mnist-labels", str(lab), "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert isinstance(ds, LabeledImages) and len(ds) == 12 and ds.side == 16


def test_make_data_missing_idx(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["make-data", "--kind", "mnist-rot", "--mnist-images", str(tmp_path / "nope"),
              "--mnist-labels", str(tmp_path / "nope2"), "--out", str(tmp_path / "o")])
    assert info.value.code == 2
    assert "no such file" in capsys.readouterr().err


def test_bad_idx_is_structured_error(tmp_path, capsys):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(struct.pack(">II", 0x999, 1) + b"\0")
    code = main(["make-data", "--kind", "mnist-rot", "--mnist-images", str(bad),
                 "--mnist-labels", str(bad), "--out", str(tmp_path / "o")])
    assert code == 1
    assert capsys.readouterr().err.startswith("tsa: error:")


def _patches(tmp_path, n=600, side=4, seed=0, name="p.tsad"):
    path = tmp_path / name
    main(["make-data", "--kind", "patches", "--n", str(n), "--side", str(side), "--seed", str(seed),
          "--out", str(path)])
    return path


def test_train_and_log(tmp_path):
    data = _patches(tmp_path)
    hold = _patches(tmp_path, n=100, seed=9, name="h.tsad")
    model = tmp_path / "m.tsa"
    assert main(["train", "--data", str(data), "--filters", "4", "--passes", "2", "--out", str(model),
                 "--holdout", str(hold), "--eval-every", "3"]) == 0
    b = load_model(model).basis
    assert b.W.shape == (16, 4)
    np.testing.assert_allclose(b.W.T @ b.W, np.eye(4), atol=1e-10)
    log = (tmp_path / "m.log.csv").read_text().splitlines()
    assert log[0] == "step,passes,alpha,mean_log_marginal" and len(log) == 13
    ck = (tmp_path / "m.heldout.csv").read_text().splitlines()
    assert ck[0] == "step,heldout_mean_log_marginal" and len(ck) == 1 + 1 + 4
    assert b"\r" not in (tmp_path / "m.log.csv").read_bytes()


def test_train_zero_rate_keeps_init(tmp_path):
    data = _patches(tmp_path)
    W0 = orthogonalize(np.random.default_rng(1).standard_normal((16, 4)))
    save_model(ToralBasis(W0), tmp_path / "init.tsa")
    main(["train", "--data", str(data), "--filters", "4", "--alpha0", "0", "--init",
          str(tmp_path / "init.tsa"), "--out", str(tmp_path / "m.tsa")])
    np.testing.assert_allclose(load_model(tmp_path / "m.tsa").basis.W, W0, atol=1e-12)


def test_train_resume(tmp_path):
    data = _patches(tmp_path)
    common = ["train", "--data", str(data), "--filters", "4", "--seed", "5"]
    main(common + ["--passes", "2", "--out", str(tmp_path / "full.tsa")])
    main(common + ["--passes", "1", "--out", str(tmp_path / "a.tsa")])
    main(common + ["--passes", "1", "--start-pass", "2", "--init", str(tmp_path / "a.tsa"),
                   "--out", str(tmp_path / "b.tsa")])
    np.testing.assert_allclose(load_model(tmp_path / "b.tsa").basis.W,
                               load_model(tmp_path / "full.tsa").basis.W, atol=1e-12)


def test_train_usage_errors(tmp_path):
    data = _patches(tmp_path)
    with pytest.raises(SystemExit):
        main(["train", "--data", str(data), "--filters", "3", "--out", str(tmp_path / "m.tsa")])
    imgs = LabeledImages(np.zeros((2, 4, 4)), np.array([0, 1]))
    save_dataset(imgs, tmp_path / "i.tsad")
    with pytest.raises(SystemExit):
        main(["train", "--data", str(tmp_path / "i.tsad"), "--out", str(tmp_path / "m.tsa")])


def test_estimate_weights_identity_model(tmp_path, capsys):
    # a model whose filters are all outside the inscribed disk sees no rotation
    W = np.zeros((16, 2))
    W[0, 0] = W[3, 1] = 1.0
    save_model(ToralBasis(W), tmp_path / "m.tsa")
    assert main(["estimate-weights", "--model", str(tmp_path / "m.tsa"), "--out",
                 str(tmp_path / "w.tsa"), "--table", str(tmp_path / "w.csv")]) == 0
    rows = (tmp_path / "w.csv").read_text().splitlines()
    assert rows[0] == "subspace,omega,rate,precision,confident"
    assert rows[1].split(",")[1] == "0" and rows[1].endswith("LOW")
    assert "low-confidence" in capsys.readouterr().err
    np.testing.assert_array_equal(load_model(tmp_path / "w.tsa").basis.omega, [0])


def test_estimate_weights_steerable_pair(tmp_path):
    # an x/y derivative-of-Gaussian pair rotates with weight 1
    side = 16
    c = (side - 1) / 2
    i, j = np.mgrid[:side, :side]
    px, py = j - c, c - i
    g = np.exp(-(px**2 + py**2) / 8.0)
    W = orthogonalize(np.column_stack([(px * g).ravel(), (py * g).ravel()]))
    save_model(ToralBasis(W), tmp_path / "m.tsa")
    main(["estimate-weights", "--model", str(tmp_path / "m.tsa"), "--table", str(tmp_path / "w.csv")])
    assert abs(load_model(tmp_path / "m.tsa").basis.omega[0]) == 1


def test_infer_maximal_trivial(tmp_path, capsys):
    save_model(ToralBasis(np.eye(2)), tmp_path / "m.tsa")
    np.savetxt(tmp_path / "x.txt", [1.0, 0.0])
    np.savetxt(tmp_path / "y.txt", [0.0, 1.0])
    out = tmp_path / "post.csv"
    assert main(["infer", "--model", str(tmp_path / "m.tsa"), "--x", str(tmp_path / "x.txt"),
                 "--y", str(tmp_path / "y.txt"), "--mode", "maximal", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    mean = float(text.split("mean=")[1].split()[0])
    prec = float(text.split("precision=")[1].split()[0])
    assert mean == pytest.approx(np.pi / 2) and prec == pytest.approx(1.0)
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.sum(rows[:, 2]) * (2 * np.pi / len(rows)) == pytest.approx(1.0, abs=1e-6)


def test_infer_coupled_symmetric_modes(tmp_path, capsys):
    b = dft_basis(16)
    save_model(b, tmp_path / "m.tsa")
    n = np.arange(16)
    x = np.cos(2 * np.pi * 4 * n / 16)
    np.save(tmp_path / "x.npy", x)
    out = tmp_path / "post.csv"
    main(["infer", "--model", str(tmp_path / "m.tsa"), "--x", str(tmp_path / "x.npy"),
          "--y", str(tmp_path / "x.npy"), "--out", str(out)])
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    dens = rows[:, 1]
    assert np.sum(dens) * (2 * np.pi / len(dens)) == pytest.approx(1.0, abs=1e-6)
    peaks = np.flatnonzero((dens > np.roll(dens, 1)) & (dens >= np.roll(dens, -1)))
    assert len(peaks) == 4 and np.ptp(dens[peaks]) < 1e-9 * dens.max()


def test_infer_dimension_mismatch(tmp_path, capsys):
    save_model(ToralBasis(np.eye(2)), tmp_path / "m.tsa")
    np.savetxt(tmp_path / "x.txt", [1.0, 0.0, 2.0])
    assert main(["infer", "--model", str(tmp_path / "m.tsa"), "--x", str(tmp_path / "x.txt"),
                 "--y", str(tmp_path / "x.txt")]) == 1
    assert "dimension mismatch" in capsys.readouterr().err


def _labeled(tmp_path):
    rng = np.random.default_rng(2)
    imgs = LabeledImages(rng.uniform(size=(20, 6, 6)), rng.integers(0, 3, 20))
    save_dataset(imgs, tmp_path / "d.tsad")
    return tmp_path / "d.tsad"


def test_knn_eval_train_equals_test(tmp_path):
    d = _labeled(tmp_path)
    W = orthogonalize(np.random.default_rng(0).standard_normal((36, 6)))
    save_model(ToralBasis(W, [1, 2, -1]), tmp_path / "m.tsa")
    out = tmp_path / "knn.csv"
    assert main(["knn-eval", "--model", str(tmp_path / "m.tsa"), "--train", str(d), "--test", str(d),
                 "--metric", "ed,td", "--metric", "kappa", "--metric", "md-max", "--metric", "md-coupled",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "metric,error_rate,n_train,n_test"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["ed", "td", "kappa", "md-max", "md-coupled"]
    for ln in lines[1:]:
        assert float(ln.split(",")[1]) == 0.0


def test_knn_eval_errors_and_clamp(tmp_path, capsys):
    d = _labeled(tmp_path)
    with pytest.raises(SystemExit) as info:
        main(["knn-eval", "--train", str(d), "--test", str(d), "--metric", "kappa"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["knn-eval", "--train", str(d), "--test", str(d), "--metric", "cosine"])
    capsys.readouterr()
    assert main(["knn-eval", "--train", str(d), "--test", str(d), "--metric", "ed",
                 "--limit", "500", "--self-exclude"]) == 0
    cap = capsys.readouterr()
    assert "clamped" in cap.err
    assert cap.out.splitlines()[1].split(",")[3] == "20"


def test_export_filters(tmp_path):
    b = dft_basis(16 * 16).with_omega(np.arange(1, 128))
    small = ToralBasis(b.W[:, :12], [3, -1, 2, 0, 5, 1])
    save_model(small, tmp_path / "m.tsa")
    assert main(["export-filters", "--model", str(tmp_path / "m.tsa"), "--out", str(tmp_path / "a.pgm"),
                 "--pairs-per-row", "3"]) == 0
    main(["export-filters", "--model", str(tmp_path / "m.tsa"), "--out", str(tmp_path / "b.pgm"),
          "--pairs-per-row", "3"])
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    img = _read_pgm(tmp_path / "a.pgm")
    assert img.shape == (2 * 17 + 1, 6 * 17 + 1)
    tiles = [img[1 + r * 17:17 + r * 17, 1 + c * 17:17 + c * 17] for r in range(2) for c in range(6)]
    assert len(tiles) == 12
    for t in tiles:
        assert t.min() == 0 and t.max() == 255


def test_export_dft_gratings_hash(tmp_path):
    # sinusoids along the raster: each tile row pattern is a grating
    side = 8
    D = side * side
    n = np.arange(D)
    cols = []
    for j in (1, 2):
        cols += [np.cos(2 * np.pi * j * n / D), np.sin(2 * np.pi * j * n / D)]
    W = orthogonalize(np.column_stack(cols))
    grid = filter_grid(ToralBasis(W, [1, 2]))
    digest = hashlib.sha256(grid.tobytes()).hexdigest()
    assert digest == "6e4648a1a2a547af6a7b504336a07fb15e005bc390f4dc61f99ed88ec21d0980"
    tile = grid[1:9, 1:9].astype(float)
    expect = (np.cos(2 * np.pi * n / D).reshape(side, side) + 1) / 2 * 255
    lo, hi = expect.min(), expect.max()
    np.testing.assert_allclose(tile, np.rint((expect - lo) / (hi - lo) * 255), atol=1)


def test_dft_check(capsys):
    assert main(["dft-check", "--D", "4", "--D", "16", "--seed", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "D,max_kappa_dev,max_phase_dev"
    for ln in lines[1:]:
        _, kd, pd = ln.split(",")
        assert float(kd) < 1e-10 and float(pd) < 1e-10
