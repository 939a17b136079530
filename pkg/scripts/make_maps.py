"""Regenerate the two bundled circuits under src/megadagger/maps/."""

from megadagger import circuits
from megadagger.trackworld import MAP_DIR, save_track

if __name__ == "__main__":
    for build in (circuits.map1, circuits.map2):
        world = build()
        image, meta = save_track(world, MAP_DIR, world.name)
        print(f"{world.name}: {world.grid.width}x{world.grid.height} cells, "
              f"centerline {world.length:.1f} m -> {image.name}, {meta.name}")
