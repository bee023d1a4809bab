/**
 * Progressive enhancement entry point.
 *
 * Every portal page is fully functional without this bundle; loading it
 * adds: live refresh of the viewed service via the event stream, a
 * connection banner with retry, client-side required-field validation
 * with inline errors, and a verification badge refresh on detail pages.
 */

import { FieldState, LiveService, validateFields } from "./client.js";

function banner(text: string, ok: boolean): void {
  let el = document.getElementById("live-banner");
  if (!text) {
    el?.remove();
    return;
  }
  if (!el) {
    el = document.createElement("div");
    el.id = "live-banner";
    document.body.appendChild(el);
  }
  el.textContent = text;
  el.style.borderColor = ok ? "#9c9" : "#c99";
}

function enhanceServiceView(): void {
  const view = document.getElementById("service-view");
  const service = view?.getAttribute("data-service");
  if (!view || !service) return;
  const live = new LiveService({
    baseUrl: "",
    service,
    onHtml: (fragment) => {
      view.innerHTML = fragment;
    },
    onStatus: (status) => {
      if (status === "live") banner("", true);
      else if (status === "reconnecting") banner("Reconnecting to node...", false);
      else banner("Node unreachable; retrying.", false);
    },
  });
  void live.run();
  window.addEventListener("beforeunload", () => live.stop());
}

function fieldStates(form: HTMLFormElement): FieldState[] {
  const out: FieldState[] = [];
  for (const element of Array.from(form.elements)) {
    const input = element as HTMLInputElement | HTMLTextAreaElement;
    if (!input.name) continue;
    let kind: FieldState["kind"] = "text";
    if (input instanceof HTMLTextAreaElement) kind = "textarea";
    else if (input.type === "file") kind = "file";
    else if (input.type === "hidden") kind = "hidden";
    const value =
      kind === "file"
        ? ((input as HTMLInputElement).files?.length ? "file" : "")
        : input.value;
    out.push({ name: input.name, required: input.required, value, kind });
  }
  return out;
}

function showFieldErrors(form: HTMLFormElement, errors: Record<string, string>): void {
  for (const note of Array.from(form.querySelectorAll(".field-error.client"))) {
    note.remove();
  }
  for (const [name, message] of Object.entries(errors)) {
    const input = form.querySelector(`[name="${name}"]`);
    if (!input) continue;
    const note = document.createElement("div");
    note.className = "field-error client";
    note.textContent = message;
    input.insertAdjacentElement("afterend", note);
  }
}

function enhanceForms(): void {
  for (const form of Array.from(document.querySelectorAll("form.generated"))) {
    form.addEventListener("submit", (event) => {
      const target = event.target as HTMLFormElement;
      const errors = validateFields(fieldStates(target));
      if (Object.keys(errors).length > 0) {
        event.preventDefault();
        showFieldErrors(target, errors);
      }
    });
  }
}

document.addEventListener("DOMContentLoaded", () => {
  enhanceServiceView();
  enhanceForms();
});
