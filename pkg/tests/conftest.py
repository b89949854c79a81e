import numpy as np
import pytest

from depthgaze.dataset_io import RgbdFrame, VideoSequence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_video(rgbs, depths, video_id="v"):
    frames = [RgbdFrame(i, r, d) for i, (r, d) in enumerate(zip(rgbs, depths))]
    h, w = np.asarray(rgbs[0]).shape[:2]
    return VideoSequence(video_id, frames, working_dims=(w, h))


def textured_frame(seed=0, dims=(128, 96), smooth=2.0):
    from scipy import ndimage

    w, h = dims
    r = np.random.default_rng(seed)
    rgb = ndimage.gaussian_filter(r.random((h, w, 3)), (smooth, smooth, 0))
    rgb = (rgb - rgb.min()) / (rgb.max() - rgb.min())
    depth = ndimage.gaussian_filter(r.random((h, w)), smooth)
    depth = (depth - depth.min()) / (depth.max() - depth.min())
    return rgb, depth
