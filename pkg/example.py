"""
Example usage of hoiforge: trajectory, conditions, latents and metrics
"""

import asyncio

import numpy as np

from hoiforge import HOIForge, ValidationError, inject, motion_fidelity, ssim, psnr
from hoiforge.raster import Tracklet


async def main():
    """Run the toy pipeline stage by stage and score a few synthetic inputs"""

    async with HOIForge(jobs=4) as forge:
        print("✅ hoiforge initialized with the bundled toy config")

        print("\n🖐️  Generating trajectory...")
        seq, validation = await forge.trajgen(out_dir="example-output")
        print(f"✅ {len(seq)} frames, validation pass={validation.passed}, "
              f"max penetration {validation.max_penetration_mm:.2f} mm")

        print("\n🖼️  Rendering conditions...")
        rendered = await forge.render(seq, out_dir="example-output")
        cues = rendered.cues
        print(f"✅ depth/seg/keypoint frames: {cues.frame_count} at {cues.size}, "
              f"{len(rendered.tracklets)} tracklets")

        print("\n📦 Packing latents...")
        packed = await forge.pack(cues, out_dir="example-output")
        print(f"✅ latent {packed.packed.shape}, masked cues: {packed.dropped or 'none'}")

        operator = forge.injector(base_channels=8)
        base = np.random.default_rng(0).standard_normal(packed.packed.shape[:3] + (8,))
        mixed = inject(base, packed.packed, operator)
        print(f"✅ zero-initialized injection max change: {np.abs(mixed - base).max()}")

        print("\n📏 Scoring...")
        tracks = rendered.tracklets
        if tracks:
            reversed_tracks = [Tracklet(t.points[::-1], t.visible[::-1]) for t in tracks]
            print(f"✅ MF(gt, gt) = {motion_fidelity(tracks, tracks):.3f}, "
                  f"MF(gt, reversed) = {motion_fidelity(tracks, reversed_tracks):.3f}")
        frame = cues.keypoint[-1]
        noisy = np.clip(frame + np.random.default_rng(1).normal(0, 5, frame.shape), 0, 255)
        print(f"✅ keypoint frame vs noisy copy: PSNR {psnr(frame, noisy):.2f} dB, SSIM {ssim(frame, noisy):.4f}")

        try:
            await forge.filter("missing-manifest.jsonl")
        except ValidationError as e:
            print(f"❌ Validation error: {e}")
        except Exception as e:
            print(f"⚠️  Filter skipped: {e}")


if __name__ == "__main__":
    print("🚀 hoiforge example")
    print("=" * 50)
    asyncio.run(main())
    print("\n" + "=" * 50)
    print("✨ Example completed!")
