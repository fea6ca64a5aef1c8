// One-shot playback gate: judges may hear each utterance exactly once, so the
// play control disables permanently after one complete playback.

export interface AudioLike {
  play(): Promise<void> | void;
  addEventListener(type: "ended", listener: () => void): void;
}

export class PlayGate {
  playCount = 0;
  playing = false;
  private finished = false;

  constructor(private audio: AudioLike) {
    audio.addEventListener("ended", () => {
      this.playing = false;
      this.finished = true;
    });
  }

  get enabled(): boolean {
    return this.playCount === 0 && !this.playing;
  }

  get exhausted(): boolean {
    return this.finished || this.playCount >= 1;
  }

  async play(): Promise<boolean> {
    if (!this.enabled) return false;
    this.playCount += 1;
    this.playing = true;
    await this.audio.play();
    return true;
  }
}

export function bindPlayButton(button: HTMLButtonElement, gate: PlayGate): void {
  const refresh = () => {
    button.disabled = !gate.enabled;
    if (gate.exhausted) button.textContent = "played";
  };
  button.addEventListener("click", async () => {
    await gate.play();
    refresh();
  });
  refresh();
}
