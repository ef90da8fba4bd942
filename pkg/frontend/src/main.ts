import { ServiceClient } from './api.js';
import { createApp } from './app.js';

// The page is usually served next to the API; a different service can be
// pointed at with ?service=http://host:port.
const params = new URLSearchParams(window.location.search);
const baseUrl = params.get('service') ?? '';

const root = document.getElementById('app');
if (root === null) throw new Error('missing #app element');

createApp(root, {
  client: new ServiceClient(baseUrl),
  storage: window.localStorage,
  eventSource: window.EventSource,
}).ready.catch((err) => {
  root.textContent = 'failed to start: ' + String(err);
});
