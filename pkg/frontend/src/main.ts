import { StudyClient } from "./api.js";
import { Session } from "./session.js";
import type { Side } from "./types.js";
import { canVote, ViewModel } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function raterIdFromUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("rater");
  if (fromQuery) {
    return fromQuery;
  }
  const stored = window.localStorage.getItem("rater_id");
  if (stored) {
    return stored;
  }
  const generated = `rater-${Math.random().toString(36).slice(2, 10)}`;
  window.localStorage.setItem("rater_id", generated);
  return generated;
}

/** Shared pan/zoom state applied to all panes so regions stay comparable. */
class PanZoom {
  private scale = 1;
  private x = 0;
  private y = 0;

  constructor(private images: HTMLImageElement[]) {
    for (const img of images) {
      img.addEventListener("wheel", (ev) => {
        ev.preventDefault();
        this.scale = Math.min(8, Math.max(1, this.scale * (ev.deltaY < 0 ? 1.25 : 0.8)));
        this.apply();
      });
      let dragging = false;
      let lastX = 0;
      let lastY = 0;
      img.addEventListener("pointerdown", (ev) => {
        dragging = true;
        lastX = ev.clientX;
        lastY = ev.clientY;
        img.setPointerCapture(ev.pointerId);
      });
      img.addEventListener("pointermove", (ev) => {
        if (!dragging) {
          return;
        }
        this.x += ev.clientX - lastX;
        this.y += ev.clientY - lastY;
        lastX = ev.clientX;
        lastY = ev.clientY;
        this.apply();
      });
      img.addEventListener("pointerup", () => {
        dragging = false;
      });
    }
  }

  reset(): void {
    this.scale = 1;
    this.x = 0;
    this.y = 0;
    this.apply();
  }

  private apply(): void {
    for (const img of this.images) {
      img.style.transform = `translate(${this.x}px, ${this.y}px) scale(${this.scale})`;
    }
  }
}

function bootstrap(): void {
  const raterId = raterIdFromUrl();
  el<HTMLSpanElement>("rater").textContent = raterId;

  const referenceImg = el<HTMLImageElement>("reference");
  const alignedImg = el<HTMLImageElement>("aligned");
  const leftImg = el<HTMLImageElement>("left");
  const rightImg = el<HTMLImageElement>("right");
  const progressBar = el<HTMLDivElement>("progress-bar");
  const progressText = el<HTMLSpanElement>("progress-text");
  const errorPanel = el<HTMLDivElement>("error-panel");
  const errorText = el<HTMLSpanElement>("error-text");
  const donePanel = el<HTMLDivElement>("done-panel");
  const voteButtons = [el<HTMLButtonElement>("vote-left"), el<HTMLButtonElement>("vote-right")];

  const panZoom = new PanZoom([referenceImg, alignedImg, leftImg, rightImg]);
  let imagesFailed = false;
  let currentView: ViewModel | null = null;

  const setVotingEnabled = (enabled: boolean) => {
    for (const btn of voteButtons) {
      btn.disabled = !enabled;
    }
  };

  const showError = (message: string) => {
    errorText.textContent = message;
    errorPanel.hidden = false;
    setVotingEnabled(false);
  };

  const renderView = (view: ViewModel) => {
    currentView = view;
    imagesFailed = false;
    errorPanel.hidden = true;
    donePanel.hidden = true;
    panZoom.reset();

    const assign = (img: HTMLImageElement, url: string | null) => {
      img.hidden = url === null;
      if (url !== null) {
        img.src = url;
      }
    };
    assign(referenceImg, view.referenceUrl);
    assign(alignedImg, view.alignedUrl);
    assign(leftImg, view.leftUrl);
    assign(rightImg, view.rightUrl);
    alignedImg.parentElement!.hidden = view.alignedUrl === null;

    progressBar.style.width = `${(view.progressFraction * 100).toFixed(1)}%`;
    progressText.textContent = `${view.progressDone} / ${view.progressTotal}`;
    setVotingEnabled(canVote(view, imagesFailed));
  };

  for (const img of [referenceImg, leftImg, rightImg]) {
    img.addEventListener("error", () => {
      if (!img.hidden) {
        imagesFailed = true;
        showError("An image failed to load. Retry to reload this triplet.");
      }
    });
  }

  const session = new Session(new StudyClient("", {}), raterId, {
    onView: renderView,
    onDone: () => {
      donePanel.hidden = false;
      setVotingEnabled(false);
      progressBar.style.width = "100%";
    },
    onError: showError,
  });

  const choose = (side: Side) => {
    if (currentView !== null && canVote(currentView, imagesFailed)) {
      void session.choose(side);
    }
  };
  el<HTMLButtonElement>("vote-left").addEventListener("click", () => choose("left"));
  el<HTMLButtonElement>("vote-right").addEventListener("click", () => choose("right"));
  el<HTMLButtonElement>("retry").addEventListener("click", () => void session.start());
  window.addEventListener("keydown", (ev) => {
    if (ev.key === "1") {
      choose("left");
    } else if (ev.key === "2") {
      choose("right");
    }
  });

  void session.start();
}

bootstrap();
