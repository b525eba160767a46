"""Analytic scene oracle: SDF values, sphere tracing, direct shading,
acquisition protocol and manifest round-trips."""

import json
import os

import numpy as np
import pytest

from hintfield.renderer import Camera, LightSource, Pose, camera_rays
from hintfield.scenegen import (DatasetManifest, Hit, ImageRecord, Material,
                                Primitive, SceneSpec, calibrate_exposure,
                                generate_dataset, light_occluded, lookat_pose,
                                make_camera, oracle_render_image,
                                oracle_shadow_mask, perturb_poses,
                                primitive_sdf, sample_upper_hemisphere,
                                scene_normal, scene_sdf, shade_direct,
                                sphere_plane_glossy, sphere_trace)
from hintfield.trainer import rotation_angle_deg


class TestPrimitiveSDF:
    def test_sphere(self):
        prim = Primitive(shape="sphere", center=(1.0, 0.0, 0.0), radius=0.5)
        assert primitive_sdf(prim, np.array([3.0, 0.0, 0.0])) == pytest.approx(1.5)
        assert primitive_sdf(prim, np.array([1.0, 0.0, 0.0])) == pytest.approx(-0.5)

    def test_box(self):
        prim = Primitive(shape="box", half_extents=(1.0, 2.0, 3.0))
        # outside along a face, at a corner, and inside
        assert primitive_sdf(prim, np.array([2.5, 0.0, 0.0])) == pytest.approx(1.5)
        corner = np.array([2.0, 3.0, 4.0])
        assert primitive_sdf(prim, corner) == pytest.approx(np.sqrt(3.0))
        assert primitive_sdf(prim, np.array([0.5, 0.0, 0.0])) == pytest.approx(-0.5)

    def test_torus(self):
        prim = Primitive(shape="torus", major=1.0, minor=0.25)
        assert primitive_sdf(prim, np.array([1.0, 0.0, 0.0])) == pytest.approx(-0.25)
        assert primitive_sdf(prim, np.array([0.0, 0.0, 0.0])) == pytest.approx(0.75)
        assert primitive_sdf(prim, np.array([0.0, 1.0, 0.5])) == pytest.approx(0.25)

    def test_plane(self):
        prim = Primitive(shape="plane", normal=(0.0, 0.0, 2.0), offset=-0.5)
        assert primitive_sdf(prim, np.array([7.0, -3.0, 1.0])) == pytest.approx(1.5)

    def test_unknown_shape_rejected(self):
        with pytest.raises(ValueError):
            Primitive(shape="cone")


class TestSceneSDF:
    def test_min_union_and_material(self):
        scene = sphere_plane_glossy()
        f, mat = scene_sdf(scene, np.array([[0.0, 0.0, 0.7],    # near sphere top
                                            [0.0, 0.0, -0.45]]))  # inside slab
        assert f[0] == pytest.approx(0.1, abs=1e-9)
        assert mat[0] == 0
        assert f[1] < 0 and mat[1] == 1

    def test_normal_on_sphere(self):
        scene = sphere_plane_glossy()
        p = np.array([[0.0, 0.5, 0.1]])  # on the sphere equator
        n = scene_normal(scene, p)
        np.testing.assert_allclose(n, [[0.0, 1.0, 0.0]], atol=1e-4)

    def test_validation(self):
        with pytest.raises(ValueError):
            Material(albedo=(1.2, 0.0, 0.0))
        with pytest.raises(ValueError):
            Material(albedo=(0.5, 0.5, 0.5), roughness=0.0)
        with pytest.raises(ValueError):
            SceneSpec(name="empty", primitives=(), materials=())


class TestSphereTrace:
    def test_depth_matches_closed_form(self):
        scene = SceneSpec(name="s", primitives=(Primitive(shape="sphere", radius=0.5),),
                          materials=(Material(albedo=(1.0, 1.0, 1.0)),))
        rng = np.random.default_rng(0)
        o = rng.standard_normal((20, 3))
        o *= 2.0 / np.linalg.norm(o, axis=-1, keepdims=True)
        d = -o / 2.0  # aimed at the center, unit length
        hit = sphere_trace(scene, o, d)
        assert hit.hit.all()
        np.testing.assert_allclose(hit.depth, 1.5, atol=1e-3)
        np.testing.assert_allclose(np.linalg.norm(hit.position, axis=-1), 0.5,
                                   atol=1e-3)

    def test_miss(self):
        scene = sphere_plane_glossy()
        hit = sphere_trace(scene, np.array([[3.0, 0.0, 0.0]]),
                           np.array([[0.0, 0.0, 1.0]]))
        assert not hit.hit[0]

    def test_occlusion(self):
        scene = sphere_plane_glossy()
        # slab top surface point shadowed by the sphere from straight above
        p = np.array([[0.54, 0.0, -0.4]])
        n = np.array([[0.0, 0.0, 1.0]])
        assert light_occluded(scene, p, n, np.array([0.0, 0.0, 2.0]))[0]
        assert not light_occluded(scene, p, n, np.array([2.0, 0.0, 0.2]))[0]


class TestShading:
    def test_lambertian_value(self):
        scene = SceneSpec(name="s", primitives=(Primitive(shape="sphere", radius=0.5),),
                          materials=(Material(albedo=(0.6, 0.3, 0.1)),))
        pos = np.array([[0.0, 0.0, 0.5]])
        hit = Hit(position=pos, normal=np.array([[0.0, 0.0, 1.0]]),
                  material=np.array([0]), depth=np.array([1.0]),
                  hit=np.array([True]))
        light = LightSource(np.array([0.0, 0.0, 2.5]), 10.0)
        rgb = shade_direct(scene, hit, light, np.array([0.0, 1.0, 1.5]),
                           exposure=2.0)
        # vis=1, n.l=1, d=2: rgb = 2 * 10/4 * albedo/pi
        np.testing.assert_allclose(rgb[0], 2.0 * 2.5 * np.array([0.6, 0.3, 0.1]) / np.pi,
                                   rtol=1e-12)

    def test_shadowed_pixel_is_black(self):
        scene = sphere_plane_glossy()
        cam = make_camera(np.array([0.0, -1.8, 1.2]), 32)
        light = np.array([0.0, 0.0, 2.2])
        img = oracle_render_image(scene, cam, LightSource(light, 10.0), 1.0)
        mask = oracle_shadow_mask(scene, cam, light)
        assert mask.any() and (~mask).any()
        assert np.all(img[mask] == 0.0)
        assert img[~mask].max() > 0.0

    def test_inverse_square_falloff(self):
        scene = SceneSpec(name="s", primitives=(Primitive(shape="sphere", radius=0.5),),
                          materials=(Material(albedo=(0.5, 0.5, 0.5)),))
        pos = np.array([[0.0, 0.0, 0.5]])
        hit = Hit(position=pos, normal=np.array([[0.0, 0.0, 1.0]]),
                  material=np.array([0]), depth=np.array([1.0]),
                  hit=np.array([True]))
        cam_pos = np.array([0.0, 0.0, 2.0])
        near = shade_direct(scene, hit, LightSource(np.array([0.0, 0.0, 1.5]), 5.0), cam_pos)
        far = shade_direct(scene, hit, LightSource(np.array([0.0, 0.0, 2.5]), 5.0), cam_pos)
        assert near[0, 0] == pytest.approx(4.0 * far[0, 0], rel=1e-12)


class TestAcquisition:
    def test_hemisphere_sampling(self):
        d = sample_upper_hemisphere(np.random.default_rng(0), 4000)
        np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)
        assert d[:, 2].min() >= 0.0
        assert abs(d[:, 2].mean() - 0.5) < 0.03  # uniform on hemisphere

    def test_lookat_pose(self):
        pose = lookat_pose(np.array([0.0, -2.0, 1.0]))
        R = pose.rotation
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
        fwd = R[:, 2]
        expect = -pose.translation / np.linalg.norm(pose.translation)
        np.testing.assert_allclose(fwd, expect, atol=1e-12)

    def test_camera_center_ray_hits_origin_direction(self):
        cam = make_camera(np.array([0.0, -2.2, 0.9]), 33)
        o, d = camera_rays(cam)
        center = d.reshape(33, 33, 3)[16, 16]
        expect = -cam.pose.translation / np.linalg.norm(cam.pose.translation)
        np.testing.assert_allclose(center, expect, atol=0.05)

    def test_exposure_calibration(self):
        scene = sphere_plane_glossy()
        expo = calibrate_exposure(scene, 64, 10.0)
        eye = 2.25 * np.array([0.0, -np.sin(np.radians(50.0)),
                               np.cos(np.radians(50.0))])
        light = 2.25 * np.array([np.sin(np.radians(30.0)), -0.3, 0.9])
        light *= 2.25 / np.linalg.norm(light)
        img = oracle_render_image(scene, make_camera(eye, 64),
                                  LightSource(light, 10.0), expo)
        assert np.percentile(img, 95.0) == pytest.approx(0.8, rel=1e-6)


@pytest.fixture(scope="module")
def tiny_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    man = generate_dataset(sphere_plane_glossy(), n_train=3, n_test=2,
                           image_size=16, seed=5, out_dir=str(out))
    return out, man


class TestDatasetGeneration:

    def test_files_and_splits(self, tiny_ds):
        out, man = tiny_ds
        assert len(man.split("train")) == 3
        assert len(man.split("test")) == 2
        for rec in man.records:
            assert os.path.exists(out / rec.file)

    def test_protocol_distances(self, tiny_ds):
        _, man = tiny_ds
        for rec in man.records:
            eye_d = np.linalg.norm(rec.camera.pose.translation)
            light_d = np.linalg.norm(rec.light_pos)
            assert 2.0 <= eye_d <= 2.5
            assert 2.0 <= light_d <= 2.5
            assert rec.camera.pose.translation[2] >= 0.0
            assert rec.light_pos[2] >= 0.0

    def test_manifest_round_trip(self, tiny_ds):
        out, man = tiny_ds
        loaded = DatasetManifest.load(out / "manifest.json")
        assert loaded.to_json() == man.to_json()
        assert loaded.exposure == man.exposure

    def test_images_nonempty_and_finite(self, tiny_ds):
        out, man = tiny_ds
        from hintfield.pfm import read_pfm
        for rec in man.records:
            img = read_pfm(out / rec.file)
            assert img.shape == (16, 16, 3)
            assert np.isfinite(img).all()
            assert img.max() > 0.0

    def test_rejects_empty_train(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(sphere_plane_glossy(), 0, 1, 16, 0, str(tmp_path))


class TestPerturbPoses:
    def test_perturbation_magnitudes(self, tmp_path):
        man = generate_dataset(sphere_plane_glossy(), 4, 1, 8, 3, str(tmp_path))
        pert = perturb_poses(man, rot_degrees=1.0, trans_frac=0.005, seed=9)
        for rec in pert.split("train"):
            assert rec.pose_true is not None
            ang = rotation_angle_deg(rec.camera.pose.rotation,
                                     rec.pose_true.rotation)
            assert ang == pytest.approx(1.0, abs=1e-9)
            dt = np.linalg.norm(rec.camera.pose.translation
                                - rec.pose_true.translation)
            assert dt == pytest.approx(0.005, rel=1e-9)
        for rec in pert.split("test"):
            assert rec.pose_true is None

    def test_zero_perturbation_is_identity(self, tmp_path):
        man = generate_dataset(sphere_plane_glossy(), 2, 0, 8, 4, str(tmp_path))
        pert = perturb_poses(man, 0.0, 0.0, seed=1)
        assert pert.to_json() == man.to_json()
