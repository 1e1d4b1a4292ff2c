import numpy as np
import pytest

from chanpred import archive


def sample_tensors(rng):
    return {
        "layer.0.weight": rng.standard_normal((4, 7)).astype(np.float32),
        "layer.0.bias": rng.standard_normal(7),
        "embed": (rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))).astype(np.complex64),
        "steps": np.array([12], dtype=np.int64),
        "scalar": np.float64(3.25).reshape(()),
    }


class TestRoundTrip:
    def test_bit_exact_rewrite(self, tmp_path):
        rng = np.random.default_rng(0)
        p1, p2 = tmp_path / "a.cpwt", tmp_path / "b.cpwt"
        archive.save_archive(p1, sample_tensors(rng))
        back = archive.load_archive(p1)
        archive.save_archive(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_dtypes_order(self, tmp_path):
        rng = np.random.default_rng(1)
        tensors = sample_tensors(rng)
        p = tmp_path / "a.cpwt"
        archive.save_archive(p, tensors)
        back = archive.load_archive(p)
        assert list(back) == list(tensors)
        for name, arr in tensors.items():
            got = back[name]
            assert got.dtype == np.asarray(arr).dtype
            assert got.shape == np.asarray(arr).shape
            assert np.array_equal(got, arr)

    def test_empty_archive(self, tmp_path):
        p = tmp_path / "e.cpwt"
        archive.save_archive(p, {})
        assert archive.load_archive(p) == {}

    def test_zero_dim_and_empty_tensor(self, tmp_path):
        p = tmp_path / "z.cpwt"
        tensors = {"empty": np.zeros((0, 3), dtype=np.float32)}
        archive.save_archive(p, tensors)
        back = archive.load_archive(p)
        assert back["empty"].shape == (0, 3)


class TestErrors:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.cpwt"
        p.write_bytes(b"NOPE\x01\x00")
        with pytest.raises(ValueError, match="magic"):
            archive.load_archive(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "x.cpwt"
        p.write_bytes(b"CPWT\x09\x00")
        with pytest.raises(ValueError, match="version"):
            archive.load_archive(p)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(2)
        p = tmp_path / "x.cpwt"
        archive.save_archive(p, {"w": rng.standard_normal((8, 8)).astype(np.float32)})
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(ValueError, match="truncated"):
            archive.load_archive(p)

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(ValueError, match="dtype"):
            archive.save_archive(tmp_path / "x.cpwt", {"w": np.zeros(3, dtype=np.float16)})

    def test_duplicate_names_rejected(self, tmp_path):
        p = tmp_path / "x.cpwt"
        archive.save_archive(p, {"w": np.zeros(2, dtype=np.float32)})
        raw = p.read_bytes()
        p.write_bytes(raw + raw[6:])  # append the same record again
        with pytest.raises(ValueError, match="duplicate"):
            archive.load_archive(p)
