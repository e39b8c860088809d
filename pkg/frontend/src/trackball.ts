/**
 * Turntable-style trackball: horizontal drags spin the light direction in
 * azimuth, vertical drags tilt it in elevation, and the numeric
 * azimuth/elevation readouts match the pointer motion exactly. A drag
 * across the full widget width rotates the azimuth by 180 degrees.
 */

export interface Direction3 {
  x: number;
  y: number;
  z: number;
}

const EL_LIMIT = Math.PI / 2;

export function toAzEl(d: Direction3): { azimuth: number; elevation: number } {
  return {
    azimuth: Math.atan2(d.y, d.x),
    elevation: Math.asin(Math.min(1, Math.max(-1, d.z))),
  };
}

export function fromAzEl(azimuth: number, elevation: number): Direction3 {
  const ce = Math.cos(elevation);
  return {
    x: ce * Math.cos(azimuth),
    y: ce * Math.sin(azimuth),
    z: Math.sin(elevation),
  };
}

export class Trackball {
  private azimuth: number;
  private elevation: number;

  constructor(
    initial: Direction3 = { x: 0, y: 0, z: 1 },
    private widgetWidth = 300,
    private widgetHeight = 300,
  ) {
    const ae = toAzEl(initial);
    this.azimuth = ae.azimuth;
    this.elevation = ae.elevation;
  }

  get direction(): Direction3 {
    return fromAzEl(this.azimuth, this.elevation);
  }

  get readout(): { azimuth: number; elevation: number } {
    return { azimuth: this.azimuth, elevation: this.elevation };
  }

  /** Apply a pointer drag (pixels). Returns the new unit direction. */
  drag(dxPx: number, dyPx: number): Direction3 {
    this.azimuth += (dxPx / this.widgetWidth) * Math.PI;
    this.elevation += (-dyPx / this.widgetHeight) * Math.PI;
    this.elevation = Math.min(EL_LIMIT, Math.max(-EL_LIMIT, this.elevation));
    return this.direction;
  }

  setFromDirection(d: Direction3): void {
    const ae = toAzEl(d);
    this.azimuth = ae.azimuth;
    this.elevation = ae.elevation;
  }
}
