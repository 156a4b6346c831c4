import numpy as np
import pytest

from fogattack import formats
from fogattack.model import build_cnn


def test_quantize_rule():
    np.testing.assert_array_equal(formats.quantize(np.array([0.0, 0.5, 1.0, 2.0, -1.0])),
                                  [0, 128, 255, 255, 0])


def test_ppm_round_trip(tmp_path, rng):
    img = formats.quantize(rng.random((7, 5, 3))) / 255.0
    formats.write_image(tmp_path / "a.ppm", img)
    back = formats.read_image(tmp_path / "a.ppm")
    assert back.shape == (7, 5, 3)
    np.testing.assert_array_equal(back, img)
    raw = rng.random((4, 4, 3))
    formats.write_image(tmp_path / "b.ppm", raw)
    assert np.abs(formats.read_image(tmp_path / "b.ppm") - raw).max() <= 1 / 510 + 1e-12


def test_pgm_round_trip(tmp_path):
    img = np.full((3, 2), 0.5)
    formats.write_image(tmp_path / "g.pgm", img)
    data = (tmp_path / "g.pgm").read_bytes()
    assert data.startswith(b"P5") and data[-6:] == bytes([128] * 6)
    assert formats.read_image(tmp_path / "g.pgm").shape == (3, 2, 1)


def test_ppm_header_with_comment():
    data = b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
    img = formats.decode_pnm(data)
    np.testing.assert_array_equal(img[0, 0], [1.0, 0.0, 0.0])


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n\x00\x00\x00",
    b"P6\n1 x\n255\n\x00\x00\x00",
    b"P6\n1 1\n65535\n\x00\x00\x00",
    b"P6\n2 2\n255\n\x00\x00\x00",
    b"P6\n1",
    b"",
])
def test_ppm_malformed(data):
    with pytest.raises(formats.FormatError):
        formats.decode_pnm(data)


def test_checkpoint_round_trip_bit_exact(small_model, rng, tmp_path):
    x = rng.random((3, 16, 16, 3))
    formats.save_checkpoint(tmp_path / "m.fogb", small_model)
    loaded = formats.load_checkpoint(tmp_path / "m.fogb")
    assert loaded.describe() == small_model.describe()
    assert loaded.seed == small_model.seed
    assert loaded.logits(x).tobytes() == small_model.logits(x).tobytes()


def test_checkpoint_errors():
    data = formats.encode_checkpoint(build_cnn((8, 8, 3), 3, width=2, seed=1))
    with pytest.raises(formats.FormatError, match="magic"):
        formats.decode_checkpoint(b"XOGB" + data[4:])
    with pytest.raises(formats.FormatError, match="unsupported checkpoint version 2"):
        formats.decode_checkpoint(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(formats.FormatError, match="truncated"):
        formats.decode_checkpoint(data[:-3])
    with pytest.raises(formats.FormatError, match="trailing"):
        formats.decode_checkpoint(data + b"\x00")


def test_checkpoint_shape_mismatch():
    import json
    import struct

    data = formats.encode_checkpoint(build_cnn((8, 8, 3), 3, width=2, seed=1))
    (n,) = struct.unpack("<I", data[8:12])
    desc = json.loads(data[12:12 + n])
    desc["layers"][0]["out"] = 3
    new = json.dumps(desc, sort_keys=True).encode()
    bad = data[:8] + struct.pack("<I", len(new)) + new + data[12 + n:]
    with pytest.raises(formats.FormatError, match="shape"):
        formats.decode_checkpoint(bad)


def test_atomic_write_leaves_no_temp(tmp_path):
    formats.write_json(tmp_path / "sub" / "r.json", {"b": 1, "a": [1, 2]})
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["r.json"]
    assert (tmp_path / "sub" / "r.json").read_text().startswith('{\n  "a"')


def test_csv_round_trip(tmp_path):
    rows = [{"index": 0, "label": 1, "pred": 2}, {"index": 1, "label": 0, "pred": 0}]
    formats.write_csv(tmp_path / "p.csv", rows)
    assert formats.read_csv(tmp_path / "p.csv") == [
        {"index": "0", "label": "1", "pred": "2"}, {"index": "1", "label": "0", "pred": "0"}]
