import { StudyClient } from "./api.js";
import { Session } from "./session.js";
import { canVote } from "./view.js";
function el(id) {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node;
}
function raterIdFromUrl() {
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
    constructor(images) {
        this.images = images;
        this.scale = 1;
        this.x = 0;
        this.y = 0;
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
    reset() {
        this.scale = 1;
        this.x = 0;
        this.y = 0;
        this.apply();
    }
    apply() {
        for (const img of this.images) {
            img.style.transform = `translate(${this.x}px, ${this.y}px) scale(${this.scale})`;
        }
    }
}
function bootstrap() {
    const raterId = raterIdFromUrl();
    el("rater").textContent = raterId;
    const referenceImg = el("reference");
    const alignedImg = el("aligned");
    const leftImg = el("left");
    const rightImg = el("right");
    const progressBar = el("progress-bar");
    const progressText = el("progress-text");
    const errorPanel = el("error-panel");
    const errorText = el("error-text");
    const donePanel = el("done-panel");
    const voteButtons = [el("vote-left"), el("vote-right")];
    const panZoom = new PanZoom([referenceImg, alignedImg, leftImg, rightImg]);
    let imagesFailed = false;
    let currentView = null;
    const setVotingEnabled = (enabled) => {
        for (const btn of voteButtons) {
            btn.disabled = !enabled;
        }
    };
    const showError = (message) => {
        errorText.textContent = message;
        errorPanel.hidden = false;
        setVotingEnabled(false);
    };
    const renderView = (view) => {
        currentView = view;
        imagesFailed = false;
        errorPanel.hidden = true;
        donePanel.hidden = true;
        panZoom.reset();
        const assign = (img, url) => {
            img.hidden = url === null;
            if (url !== null) {
                img.src = url;
            }
        };
        assign(referenceImg, view.referenceUrl);
        assign(alignedImg, view.alignedUrl);
        assign(leftImg, view.leftUrl);
        assign(rightImg, view.rightUrl);
        alignedImg.parentElement.hidden = view.alignedUrl === null;
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
    const choose = (side) => {
        if (currentView !== null && canVote(currentView, imagesFailed)) {
            void session.choose(side);
        }
    };
    el("vote-left").addEventListener("click", () => choose("left"));
    el("vote-right").addEventListener("click", () => choose("right"));
    el("retry").addEventListener("click", () => void session.start());
    window.addEventListener("keydown", (ev) => {
        if (ev.key === "1") {
            choose("left");
        }
        else if (ev.key === "2") {
            choose("right");
        }
    });
    void session.start();
}
bootstrap();
